// Linear-probe evaluation of frozen representations: extract encoder outputs
// without augmentation, fit a multinomial-logistic probe by full-batch
// gradient descent, and score argmax accuracy. The probe object persists
// across evaluations so each one warm-starts from the previous solution.
#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "fcl/losses.hpp"
#include "fcl/matrix.hpp"
#include "fcl/model.hpp"

namespace fcl {

struct LinearProbe {
  Matrix w;  // num_classes x rep_dim
  Matrix b;  // 1 x num_classes
  long version = 0;  // bumped by every train_probe call

  LinearProbe() = default;
  LinearProbe(std::size_t num_classes, std::size_t rep_dim)
      : w(num_classes, rep_dim), b(1, num_classes) {}
};

// Deterministic single-pass encoder output (no views, no projector).
inline Matrix extract_representations(const ModelParams& params, const Matrix& x) {
  return mlp_forward(params.encoder, x).output();
}

// Mean multinomial cross-entropy of the probe on (reps, labels).
inline double probe_loss(const LinearProbe& probe, const Matrix& reps,
                         const std::vector<int>& labels) {
  const std::size_t n = reps.rows();
  if (labels.size() != n) throw std::invalid_argument("probe_loss: label count mismatch");
  if (n == 0) return 0.0;
  Matrix logits = matmul(reps, transpose(probe.w));
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < probe.b.cols(); ++c) logits(i, c) += probe.b(0, c);
    loss += detail::logsumexp_row(logits.row_ptr(i), logits.cols()) -
            logits(i, static_cast<std::size_t>(labels[i]));
  }
  return loss / n;
}

// Full-batch gradient descent on the probe's cross-entropy, starting from the
// probe's current parameters. The representations are inputs, never touched.
inline void train_probe(LinearProbe& probe, const Matrix& reps, const std::vector<int>& labels,
                        int epochs, double lr) {
  const std::size_t n = reps.rows();
  if (labels.size() != n) throw std::invalid_argument("train_probe: label count mismatch");
  if (epochs < 0) throw std::invalid_argument("train_probe: epochs must be >= 0");
  const std::size_t C = probe.w.rows();
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= C) {
      throw std::invalid_argument("train_probe: label out of range");
    }
  }
  ++probe.version;
  if (n == 0) return;
  for (int e = 0; e < epochs; ++e) {
    Matrix logits = matmul(reps, transpose(probe.w));
    Matrix d_logits(n, C);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < C; ++c) logits(i, c) += probe.b(0, c);
      const double lse = detail::logsumexp_row(logits.row_ptr(i), C);
      for (std::size_t c = 0; c < C; ++c) {
        const double onehot = (static_cast<std::size_t>(labels[i]) == c) ? 1.0 : 0.0;
        d_logits(i, c) = (std::exp(logits(i, c) - lse) - onehot) / n;
      }
    }
    Matrix d_w = matmul(transpose(d_logits), reps);
    d_w *= -lr;
    probe.w += d_w;
    for (std::size_t c = 0; c < C; ++c) {
      double g = 0.0;
      for (std::size_t i = 0; i < n; ++i) g += d_logits(i, c);
      probe.b(0, c) -= lr * g;
    }
  }
}

// Fraction of argmax matches; ties resolve to the lowest class index.
inline double probe_accuracy(const LinearProbe& probe, const Matrix& reps,
                             const std::vector<int>& labels) {
  const std::size_t n = reps.rows();
  if (labels.size() != n) throw std::invalid_argument("probe_accuracy: label count mismatch");
  if (n == 0) return 0.0;
  Matrix logits = matmul(reps, transpose(probe.w));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_v = logits(i, 0) + probe.b(0, 0);
    for (std::size_t c = 1; c < probe.b.cols(); ++c) {
      const double v = logits(i, c) + probe.b(0, c);
      if (v > best_v) {
        best_v = v;
        best = c;
      }
    }
    if (best == static_cast<std::size_t>(labels[i])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace fcl
