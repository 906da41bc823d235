// Training objectives as pure batch-loss functions with analytic gradients:
// the K-sample contrastive bound, the client-verification (UV) loss with its
// owner-row-only weight update, the per-class contrastive variant and label
// cross-entropy for the semi-supervised setting, spectral contrastive and
// SimSiam variants, and the composition a client optimizes locally.
//
// Conventions used throughout:
//   * every returned `loss` is the quantity a client minimizes; for the
//     contrastive bound this is the negative of the bound value,
//   * gradients are with respect to the immediate inputs (view projections,
//     encoder outputs) and the head parameters a loss owns; routing those
//     through encoder/projector is the model module's job,
//   * log-sum-exp is computed with max subtraction.
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fcl/matrix.hpp"
#include "fcl/model.hpp"

namespace fcl {

enum class Method {
  local_simclr,
  federated_simclr,
  spectral,
  spectral_uv,
  simsiam,
  simsiam_uv,
  supervised,
};

inline bool method_has_uv(Method m) {
  return m == Method::federated_simclr || m == Method::spectral_uv ||
         m == Method::simsiam_uv;
}

inline bool method_has_predictor(Method m) {
  return m == Method::simsiam || m == Method::simsiam_uv;
}

enum class UnsupFamily { simclr, spectral, simsiam, none };

inline UnsupFamily unsup_family(Method m) {
  switch (m) {
    case Method::local_simclr:
    case Method::federated_simclr:
      return UnsupFamily::simclr;
    case Method::spectral:
    case Method::spectral_uv:
      return UnsupFamily::spectral;
    case Method::simsiam:
    case Method::simsiam_uv:
      return UnsupFamily::simsiam;
    case Method::supervised:
      return UnsupFamily::none;
  }
  return UnsupFamily::none;
}

inline const char* method_name(Method m) {
  switch (m) {
    case Method::local_simclr: return "local_simclr";
    case Method::federated_simclr: return "federated_simclr";
    case Method::spectral: return "spectral";
    case Method::spectral_uv: return "spectral_uv";
    case Method::simsiam: return "simsiam";
    case Method::simsiam_uv: return "simsiam_uv";
    case Method::supervised: return "supervised";
  }
  return "?";
}

inline std::optional<Method> parse_method(std::string_view s) {
  for (Method m : {Method::local_simclr, Method::federated_simclr, Method::spectral,
                   Method::spectral_uv, Method::simsiam, Method::simsiam_uv,
                   Method::supervised}) {
    if (s == method_name(m)) return m;
  }
  return std::nullopt;
}

// Scoring function inside the contrastive bound: cosine similarity divided
// by a temperature. Symmetric in its arguments and bounded by 1/temperature.
struct Critic {
  double temperature = 0.5;
  double norm_eps = 1e-12;
};

// A batch of positive view pairs from one client. Row k of z1_* and z2_* are
// the two views of the same datapoint. Encoder outputs ride along because
// the label head reads them; they may be left empty when unused.
struct BatchViews {
  Matrix z1_proj;
  Matrix z2_proj;
  Matrix z1_enc;
  Matrix z2_enc;
  std::vector<int> labels;  // empty when the batch carries no labels
  int client_id = 0;
};

namespace detail {

inline double logsumexp_row(const double* v, std::size_t n) {
  double m = v[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, v[i]);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

struct RowNormalized {
  Matrix unit;
  std::vector<double> norms;     // max(||row||, eps)
  std::vector<std::uint8_t> floored;
};

inline RowNormalized normalize_rows(const Matrix& m, double eps) {
  RowNormalized rn;
  rn.unit = Matrix(m.rows(), m.cols());
  rn.norms.resize(m.rows());
  rn.floored.resize(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double raw = row_norm(m, i);
    rn.floored[i] = raw <= eps;
    rn.norms[i] = std::max(raw, eps);
    for (std::size_t j = 0; j < m.cols(); ++j) rn.unit(i, j) = m(i, j) / rn.norms[i];
  }
  return rn;
}

// Backward of u = x / max(||x||, eps). On the floored branch the norm is a
// constant, so the map is linear there.
inline Matrix normalize_rows_backward(const RowNormalized& rn, const Matrix& d_unit) {
  Matrix d_x(d_unit.rows(), d_unit.cols());
  for (std::size_t i = 0; i < d_unit.rows(); ++i) {
    const double* du = d_unit.row_ptr(i);
    const double* u = rn.unit.row_ptr(i);
    double* dx = d_x.row_ptr(i);
    if (rn.floored[i]) {
      for (std::size_t j = 0; j < d_unit.cols(); ++j) dx[j] = du[j] / rn.norms[i];
    } else {
      const double proj = dot(du, u, d_unit.cols());
      for (std::size_t j = 0; j < d_unit.cols(); ++j)
        dx[j] = (du[j] - proj * u[j]) / rn.norms[i];
    }
  }
  return d_x;
}

}  // namespace detail

// --- InfoNCE ----------------------------------------------------------------

struct InfoNceResult {
  double loss = 0.0;           // negative bound value
  Matrix d_z1, d_z2;
};

// K-sample contrastive loss between paired views. The bound value (-loss)
// never exceeds log K. K = 0 or 1 gives 0 with zero gradients.
inline InfoNceResult infonce(const Matrix& z1, const Matrix& z2, const Critic& critic) {
  if (z1.rows() != z2.rows() || z1.cols() != z2.cols()) {
    throw std::invalid_argument("infonce: view shapes disagree");
  }
  const std::size_t K = z1.rows();
  InfoNceResult r;
  r.d_z1 = Matrix(z1.rows(), z1.cols());
  r.d_z2 = Matrix(z2.rows(), z2.cols());
  if (K == 0) return r;

  const auto n1 = detail::normalize_rows(z1, critic.norm_eps);
  const auto n2 = detail::normalize_rows(z2, critic.norm_eps);
  const double inv_tau = 1.0 / critic.temperature;
  // scores(j, k) = f(z1_j, z2_k)
  Matrix scores = matmul(n1.unit, transpose(n2.unit));
  scores *= inv_tau;

  // Column-wise softmax: each view-2 row k is contrasted against all of z1.
  Matrix d_scores(K, K);
  double loss = 0.0;
  std::vector<double> col(K);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t j = 0; j < K; ++j) col[j] = scores(j, k);
    const double lse = detail::logsumexp_row(col.data(), K);
    loss += lse - scores(k, k);
    for (std::size_t j = 0; j < K; ++j) {
      d_scores(j, k) = (std::exp(scores(j, k) - lse) - (j == k ? 1.0 : 0.0)) / K;
    }
  }
  r.loss = loss / K - std::log(static_cast<double>(K));

  Matrix d_u1 = matmul(d_scores, n2.unit);
  d_u1 *= inv_tau;
  Matrix d_u2 = matmul(transpose(d_scores), n1.unit);
  d_u2 *= inv_tau;
  r.d_z1 = detail::normalize_rows_backward(n1, d_u1);
  r.d_z2 = detail::normalize_rows_backward(n2, d_u2);
  return r;
}

// --- client-verification loss ------------------------------------------------

struct UvLossResult {
  double loss = 0.0;
  Matrix d_z1, d_z2;
  Matrix d_uv;  // full uv_weights shape; exactly zero outside row client_id
};

// Cross-entropy of the client ID under cosine logits between the normalized
// projections and the unit-norm client rows, summed over both views. The
// weight gradient is masked to the owning client's row; all other rows are
// treated as constants of the local problem.
inline UvLossResult uv_loss(const Matrix& z1, const Matrix& z2, const Matrix& uv_weights,
                            int client_id, double norm_eps = 1e-12) {
  if (client_id < 0 || static_cast<std::size_t>(client_id) >= uv_weights.rows()) {
    throw std::invalid_argument("uv_loss: client_id out of range");
  }
  if (z1.cols() != uv_weights.cols() || z2.cols() != uv_weights.cols()) {
    throw std::invalid_argument("uv_loss: embedding dim does not match uv_weights");
  }
  const std::size_t K = z1.rows();
  const std::size_t S = uv_weights.rows();
  UvLossResult r;
  r.d_z1 = Matrix(z1.rows(), z1.cols());
  r.d_z2 = Matrix(z2.rows(), z2.cols());
  r.d_uv = Matrix(uv_weights.rows(), uv_weights.cols());
  if (K == 0) return r;

  const std::size_t s = static_cast<std::size_t>(client_id);
  auto one_view = [&](const Matrix& z, Matrix& d_z) {
    const auto nz = detail::normalize_rows(z, norm_eps);
    Matrix logits = matmul(nz.unit, transpose(uv_weights));  // K x S
    Matrix d_logits(K, S);
    double view_loss = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double lse = detail::logsumexp_row(logits.row_ptr(k), S);
      view_loss += lse - logits(k, s);
      for (std::size_t c = 0; c < S; ++c) {
        d_logits(k, c) = (std::exp(logits(k, c) - lse) - (c == s ? 1.0 : 0.0)) / K;
      }
    }
    Matrix d_unit = matmul(d_logits, uv_weights);
    d_z = detail::normalize_rows_backward(nz, d_unit);
    // Only the owner's row moves; everything else is received and kept fixed.
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t j = 0; j < uv_weights.cols(); ++j) {
        r.d_uv(s, j) += d_logits(k, s) * nz.unit(k, j);
      }
    }
    return view_loss / K;
  };
  r.loss = one_view(z1, r.d_z1) + one_view(z2, r.d_z2);
  return r;
}

// --- label cross-entropy ------------------------------------------------------

struct LabelCeResult {
  double loss = 0.0;
  Matrix d_r1, d_r2;
  Layer d_head;
};

// Mean negative log-softmax of the true label under the linear label head,
// summed over both views. r1/r2 are the head inputs (encoder outputs).
inline LabelCeResult label_ce_loss(const Matrix& r1, const Matrix& r2,
                                   const std::vector<int>& labels, const Layer& head) {
  const std::size_t K = r1.rows();
  if (labels.size() != K || r2.rows() != K) {
    throw std::invalid_argument("label_ce_loss: batch sizes disagree");
  }
  const std::size_t C = head.w.rows();
  LabelCeResult r;
  r.d_r1 = Matrix(r1.rows(), r1.cols());
  r.d_r2 = Matrix(r2.rows(), r2.cols());
  r.d_head.w = Matrix(head.w.rows(), head.w.cols());
  r.d_head.b = Matrix(1, C);
  if (K == 0) return r;
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= C) {
      throw std::invalid_argument("label_ce_loss: label out of range");
    }
  }
  auto one_view = [&](const Matrix& reps, Matrix& d_reps) {
    Matrix logits = affine(reps, head);  // K x C
    Matrix d_logits(K, C);
    double view_loss = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t y = static_cast<std::size_t>(labels[k]);
      const double lse = detail::logsumexp_row(logits.row_ptr(k), C);
      view_loss += lse - logits(k, y);
      for (std::size_t c = 0; c < C; ++c) {
        d_logits(k, c) = (std::exp(logits(k, c) - lse) - (c == y ? 1.0 : 0.0)) / K;
      }
    }
    d_reps = matmul(d_logits, head.w);
    r.d_head.w += matmul(transpose(d_logits), reps);
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t c = 0; c < C; ++c) r.d_head.b(0, c) += d_logits(k, c);
    return view_loss / K;
  };
  r.loss = one_view(r1, r.d_r1) + one_view(r2, r.d_r2);
  return r;
}

// --- spectral contrastive loss -------------------------------------------------

struct SpectralResult {
  double loss = 0.0;
  Matrix d_z1, d_z2;
};

// L = -2 mean_k <z1_k, z2_k> + mean_{k != j} <z1_k, z2_j>^2, on raw
// (unnormalized) projections. The negative term vanishes for K < 2.
inline SpectralResult spectral_loss(const Matrix& z1, const Matrix& z2) {
  if (z1.rows() != z2.rows() || z1.cols() != z2.cols()) {
    throw std::invalid_argument("spectral_loss: view shapes disagree");
  }
  const std::size_t K = z1.rows();
  SpectralResult r;
  r.d_z1 = Matrix(z1.rows(), z1.cols());
  r.d_z2 = Matrix(z2.rows(), z2.cols());
  if (K == 0) return r;

  Matrix gram = matmul(z1, transpose(z2));  // gram(k, j) = <z1_k, z2_j>
  double pos = 0.0;
  for (std::size_t k = 0; k < K; ++k) pos += gram(k, k);
  double neg = 0.0;
  if (K >= 2) {
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t j = 0; j < K; ++j)
        if (j != k) neg += gram(k, j) * gram(k, j);
    neg /= static_cast<double>(K * (K - 1));
  }
  r.loss = -2.0 * pos / K + neg;

  const double cpos = -2.0 / static_cast<double>(K);
  for (std::size_t k = 0; k < K; ++k) {
    const double* z2k = z2.row_ptr(k);
    const double* z1k = z1.row_ptr(k);
    for (std::size_t c = 0; c < z1.cols(); ++c) {
      r.d_z1(k, c) += cpos * z2k[c];
      r.d_z2(k, c) += cpos * z1k[c];
    }
  }
  if (K >= 2) {
    const double cneg = 2.0 / static_cast<double>(K * (K - 1));
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t j = 0; j < K; ++j) {
        if (j == k) continue;
        const double g = cneg * gram(k, j);
        const double* z2j = z2.row_ptr(j);
        const double* z1k = z1.row_ptr(k);
        for (std::size_t c = 0; c < z1.cols(); ++c) {
          r.d_z1(k, c) += g * z2j[c];
          r.d_z2(j, c) += g * z1k[c];
        }
      }
    }
  }
  return r;
}

// --- SimSiam -------------------------------------------------------------------

struct SimsiamResult {
  double loss = 0.0;
  Matrix d_z1, d_z2;
  std::vector<Layer> d_predictor;
};

// Frozen copies of the projections used as cosine targets; the values equal
// the live projections, but no gradient flows into them. Tests substitute
// base-point copies here to express finite differences "through the
// non-stopped branch only".
struct SimsiamTargets {
  Matrix t1;  // target for view 2's predictor output (a copy of z1_proj)
  Matrix t2;  // target for view 1's predictor output (a copy of z2_proj)
};

// L = -1/2 [ mean_k cos(pred(z1_k), stopgrad(z2_k)) +
//            mean_k cos(pred(z2_k), stopgrad(z1_k)) ].
// `detach_targets` realizes the stop-gradient; disabling it (tests only)
// lets gradient flow into the target branch as well.
inline SimsiamResult simsiam_loss(const Matrix& z1, const Matrix& z2,
                                  const std::vector<Layer>& predictor,
                                  const SimsiamTargets* frozen = nullptr,
                                  bool detach_targets = true,
                                  double norm_eps = 1e-12) {
  if (predictor.empty()) throw std::invalid_argument("simsiam_loss: predictor params missing");
  if (z1.rows() != z2.rows() || z1.cols() != z2.cols()) {
    throw std::invalid_argument("simsiam_loss: view shapes disagree");
  }
  const std::size_t K = z1.rows();
  SimsiamResult r;
  r.d_z1 = Matrix(z1.rows(), z1.cols());
  r.d_z2 = Matrix(z2.rows(), z2.cols());
  r.d_predictor.resize(predictor.size());
  for (std::size_t i = 0; i < predictor.size(); ++i) {
    r.d_predictor[i].w = Matrix(predictor[i].w.rows(), predictor[i].w.cols());
    r.d_predictor[i].b = Matrix(predictor[i].b.rows(), predictor[i].b.cols());
  }
  if (K == 0) return r;

  const Matrix& target1 = frozen ? frozen->t1 : z1;
  const Matrix& target2 = frozen ? frozen->t2 : z2;

  auto accumulate = [&](const std::vector<Layer>& src) {
    for (std::size_t i = 0; i < src.size(); ++i) {
      r.d_predictor[i].w += src[i].w;
      r.d_predictor[i].b += src[i].b;
    }
  };

  // One symmetric half: predictor on `online`, cosine against `target`.
  auto half = [&](const Matrix& online, const Matrix& target, Matrix& d_online,
                  Matrix& d_target_out) {
    MlpTrace trace = mlp_forward(predictor, online);
    const Matrix& p = trace.output();
    const auto np = detail::normalize_rows(p, norm_eps);
    const auto nt = detail::normalize_rows(target, norm_eps);
    double sum_cos = 0.0;
    Matrix d_up(p.rows(), p.cols());
    Matrix d_ut(target.rows(), target.cols());
    for (std::size_t k = 0; k < K; ++k) {
      const double c = dot(np.unit.row_ptr(k), nt.unit.row_ptr(k), p.cols());
      sum_cos += c;
      const double w = -0.5 / static_cast<double>(K);  // d loss / d cos_k
      for (std::size_t j = 0; j < p.cols(); ++j) {
        d_up(k, j) = w * nt.unit(k, j);
        d_ut(k, j) = w * np.unit(k, j);
      }
    }
    Matrix d_p = detail::normalize_rows_backward(np, d_up);
    MlpGrads g = mlp_backward(predictor, trace, d_p);
    accumulate(g.layers);
    d_online += g.d_input;
    if (!detach_targets) d_target_out += detail::normalize_rows_backward(nt, d_ut);
    return -0.5 * sum_cos / static_cast<double>(K);
  };

  r.loss = half(z1, target2, r.d_z1, r.d_z2) + half(z2, target1, r.d_z2, r.d_z1);
  return r;
}

// --- per-class grouping --------------------------------------------------------

struct GroupedUnsupResult {
  double loss = 0.0;
  Matrix d_z1, d_z2;
  std::vector<Layer> d_predictor;  // simsiam family only
};

namespace detail {

// Applies an unsupervised family loss within each label group and combines
// the group losses as a sample-weighted mean (weight |group| / K over all
// labelled rows). For the contrastive family a singleton group contributes
// exactly zero.
inline GroupedUnsupResult per_class_unsup_loss(
    const Matrix& z1, const Matrix& z2, const std::vector<int>& labels,
    UnsupFamily family, const Critic& critic, const std::vector<Layer>& predictor,
    const SimsiamTargets* frozen) {
  const std::size_t K = z1.rows();
  GroupedUnsupResult out;
  out.d_z1 = Matrix(z1.rows(), z1.cols());
  out.d_z2 = Matrix(z2.rows(), z2.cols());
  if (family == UnsupFamily::simsiam) {
    out.d_predictor.resize(predictor.size());
    for (std::size_t i = 0; i < predictor.size(); ++i) {
      out.d_predictor[i].w = Matrix(predictor[i].w.rows(), predictor[i].w.cols());
      out.d_predictor[i].b = Matrix(predictor[i].b.rows(), predictor[i].b.cols());
    }
  }
  if (K == 0 || family == UnsupFamily::none) return out;
  if (labels.size() != K) throw std::invalid_argument("per_class_unsup_loss: labels missing");

  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t k = 0; k < K; ++k) groups[labels[k]].push_back(k);

  for (const auto& [label, idx] : groups) {
    (void)label;
    const double weight = static_cast<double>(idx.size()) / static_cast<double>(K);
    const Matrix g1 = z1.gather_rows(idx);
    const Matrix g2 = z2.gather_rows(idx);
    if (family == UnsupFamily::simclr) {
      InfoNceResult r = infonce(g1, g2, critic);
      out.loss += weight * r.loss;
      r.d_z1 *= weight;
      r.d_z2 *= weight;
      out.d_z1.scatter_add_rows(idx, r.d_z1);
      out.d_z2.scatter_add_rows(idx, r.d_z2);
    } else if (family == UnsupFamily::spectral) {
      SpectralResult r = spectral_loss(g1, g2);
      out.loss += weight * r.loss;
      r.d_z1 *= weight;
      r.d_z2 *= weight;
      out.d_z1.scatter_add_rows(idx, r.d_z1);
      out.d_z2.scatter_add_rows(idx, r.d_z2);
    } else {
      SimsiamTargets group_frozen;
      const SimsiamTargets* fp = nullptr;
      if (frozen) {
        group_frozen.t1 = frozen->t1.gather_rows(idx);
        group_frozen.t2 = frozen->t2.gather_rows(idx);
        fp = &group_frozen;
      }
      SimsiamResult r = simsiam_loss(g1, g2, predictor, fp);
      out.loss += weight * r.loss;
      r.d_z1 *= weight;
      r.d_z2 *= weight;
      out.d_z1.scatter_add_rows(idx, r.d_z1);
      out.d_z2.scatter_add_rows(idx, r.d_z2);
      for (std::size_t i = 0; i < predictor.size(); ++i) {
        r.d_predictor[i].w *= weight;
        r.d_predictor[i].b *= weight;
        out.d_predictor[i].w += r.d_predictor[i].w;
        out.d_predictor[i].b += r.d_predictor[i].b;
      }
    }
  }
  return out;
}

}  // namespace detail

// Per-class contrastive loss over a fully labelled batch (sample-weighted
// mean of group losses; singleton groups contribute zero).
inline GroupedUnsupResult supervised_contrastive_infonce(const Matrix& z1, const Matrix& z2,
                                                         const std::vector<int>& labels,
                                                         const Critic& critic) {
  return detail::per_class_unsup_loss(z1, z2, labels, UnsupFamily::simclr, critic, {},
                                      nullptr);
}

// --- client-side composition ----------------------------------------------------

struct ComposeResult {
  double total = 0.0;
  double contrastive = 0.0;  // unlabelled + per-class unsupervised terms
  double uv = 0.0;           // beta-weighted UV contribution
  double label = 0.0;
  Matrix d_z1_proj, d_z2_proj;
  Matrix d_z1_enc, d_z2_enc;
  Matrix d_uv;               // masked to the owning client's row
  Layer d_label_head;
  std::vector<Layer> d_predictor;
};

// The loss a client optimizes in one step: the unsupervised loss on
// unlabelled rows, the same loss per class group on labelled rows, label
// cross-entropy on labelled rows, and (UV methods) beta times the
// client-verification loss on every row of the batch. `supervised` keeps
// only the label term.
inline ComposeResult compose_client_loss(const ModelParams& params, const BatchViews& views,
                                         const std::vector<std::uint8_t>& labelled_mask,
                                         Method method, double beta, const Critic& critic,
                                         const SimsiamTargets* frozen = nullptr) {
  const std::size_t K = views.z1_proj.rows();
  if (views.z2_proj.rows() != K) throw std::invalid_argument("compose: view rows disagree");
  if (!labelled_mask.empty() && labelled_mask.size() != K) {
    throw std::invalid_argument("compose: labelled_mask length mismatch");
  }
  if (beta < 0.0) throw std::invalid_argument("compose: beta must be >= 0");
  if (method_has_predictor(method) && params.predictor.empty()) {
    throw std::invalid_argument("compose: method needs predictor params");
  }

  ComposeResult out;
  out.d_z1_proj = Matrix(views.z1_proj.rows(), views.z1_proj.cols());
  out.d_z2_proj = Matrix(views.z2_proj.rows(), views.z2_proj.cols());
  out.d_z1_enc = Matrix(views.z1_enc.rows(), views.z1_enc.cols());
  out.d_z2_enc = Matrix(views.z2_enc.rows(), views.z2_enc.cols());
  out.d_uv = Matrix(params.uv_weights.rows(), params.uv_weights.cols());
  out.d_label_head.w = Matrix(params.label_head.w.rows(), params.label_head.w.cols());
  out.d_label_head.b = Matrix(params.label_head.b.rows(), params.label_head.b.cols());
  out.d_predictor.resize(params.predictor.size());
  for (std::size_t i = 0; i < params.predictor.size(); ++i) {
    out.d_predictor[i].w = Matrix(params.predictor[i].w.rows(), params.predictor[i].w.cols());
    out.d_predictor[i].b = Matrix(params.predictor[i].b.rows(), params.predictor[i].b.cols());
  }

  std::vector<std::size_t> unlab, lab;
  for (std::size_t k = 0; k < K; ++k) {
    const bool is_lab = !labelled_mask.empty() && labelled_mask[k];
    (is_lab ? lab : unlab).push_back(k);
  }
  if (!lab.empty() && views.labels.size() != K) {
    throw std::invalid_argument("compose: labelled rows present but labels missing");
  }

  const UnsupFamily family = unsup_family(method);

  // Unsupervised loss on the unlabelled slice.
  if (family != UnsupFamily::none && !unlab.empty()) {
    const Matrix u1 = views.z1_proj.gather_rows(unlab);
    const Matrix u2 = views.z2_proj.gather_rows(unlab);
    if (family == UnsupFamily::simclr) {
      InfoNceResult r = infonce(u1, u2, critic);
      out.contrastive += r.loss;
      out.d_z1_proj.scatter_add_rows(unlab, r.d_z1);
      out.d_z2_proj.scatter_add_rows(unlab, r.d_z2);
    } else if (family == UnsupFamily::spectral) {
      SpectralResult r = spectral_loss(u1, u2);
      out.contrastive += r.loss;
      out.d_z1_proj.scatter_add_rows(unlab, r.d_z1);
      out.d_z2_proj.scatter_add_rows(unlab, r.d_z2);
    } else {
      SimsiamTargets sub_frozen;
      const SimsiamTargets* fp = nullptr;
      if (frozen) {
        sub_frozen.t1 = frozen->t1.gather_rows(unlab);
        sub_frozen.t2 = frozen->t2.gather_rows(unlab);
        fp = &sub_frozen;
      }
      SimsiamResult r = simsiam_loss(u1, u2, params.predictor, fp);
      out.contrastive += r.loss;
      out.d_z1_proj.scatter_add_rows(unlab, r.d_z1);
      out.d_z2_proj.scatter_add_rows(unlab, r.d_z2);
      for (std::size_t i = 0; i < params.predictor.size(); ++i) {
        out.d_predictor[i].w += r.d_predictor[i].w;
        out.d_predictor[i].b += r.d_predictor[i].b;
      }
    }
  }

  // Per-class unsupervised loss and label cross-entropy on the labelled slice.
  if (!lab.empty() && method != Method::supervised) {
    std::vector<int> lab_labels(lab.size());
    for (std::size_t i = 0; i < lab.size(); ++i) lab_labels[i] = views.labels[lab[i]];
    const Matrix l1 = views.z1_proj.gather_rows(lab);
    const Matrix l2 = views.z2_proj.gather_rows(lab);
    SimsiamTargets sub_frozen;
    const SimsiamTargets* fp = nullptr;
    if (frozen && family == UnsupFamily::simsiam) {
      sub_frozen.t1 = frozen->t1.gather_rows(lab);
      sub_frozen.t2 = frozen->t2.gather_rows(lab);
      fp = &sub_frozen;
    }
    GroupedUnsupResult r = detail::per_class_unsup_loss(l1, l2, lab_labels, family, critic,
                                                        params.predictor, fp);
    out.contrastive += r.loss;
    out.d_z1_proj.scatter_add_rows(lab, r.d_z1);
    out.d_z2_proj.scatter_add_rows(lab, r.d_z2);
    for (std::size_t i = 0; i < r.d_predictor.size(); ++i) {
      out.d_predictor[i].w += r.d_predictor[i].w;
      out.d_predictor[i].b += r.d_predictor[i].b;
    }
  }
  if (!lab.empty()) {
    std::vector<int> lab_labels(lab.size());
    for (std::size_t i = 0; i < lab.size(); ++i) lab_labels[i] = views.labels[lab[i]];
    const Matrix r1 = views.z1_enc.gather_rows(lab);
    const Matrix r2 = views.z2_enc.gather_rows(lab);
    LabelCeResult r = label_ce_loss(r1, r2, lab_labels, params.label_head);
    out.label = r.loss;
    out.d_z1_enc.scatter_add_rows(lab, r.d_r1);
    out.d_z2_enc.scatter_add_rows(lab, r.d_r2);
    out.d_label_head.w += r.d_head.w;
    out.d_label_head.b += r.d_head.b;
  }

  // UV term over the whole batch, labelled rows included.
  if (method_has_uv(method) && beta > 0.0 && K > 0) {
    UvLossResult r = uv_loss(views.z1_proj, views.z2_proj, params.uv_weights,
                             views.client_id, critic.norm_eps);
    out.uv = beta * r.loss;
    r.d_z1 *= beta;
    r.d_z2 *= beta;
    r.d_uv *= beta;
    out.d_z1_proj += r.d_z1;
    out.d_z2_proj += r.d_z2;
    out.d_uv += r.d_uv;
  }

  out.total = out.contrastive + out.uv + out.label;
  return out;
}

// --- full parameter-space step -----------------------------------------------

struct StepResult {
  double total = 0.0, contrastive = 0.0, uv = 0.0, label = 0.0;
  ModelParams grads;
};

// Forward both views through the model, compose the client loss, and route
// every gradient back to parameter space. This is the function the gradient
// suite differentiates.
inline StepResult loss_and_param_grads(const ModelParams& params, const Matrix& x1,
                                       const Matrix& x2, const std::vector<int>& labels,
                                       const std::vector<std::uint8_t>& labelled_mask,
                                       int client_id, Method method, double beta,
                                       const Critic& critic,
                                       const SimsiamTargets* frozen = nullptr) {
  ForwardTrace trace = forward_views(params, x1, x2);
  BatchViews views;
  views.z1_proj = trace.p1();
  views.z2_proj = trace.p2();
  views.z1_enc = trace.z1();
  views.z2_enc = trace.z2();
  views.labels = labels;
  views.client_id = client_id;
  ComposeResult c = compose_client_loss(params, views, labelled_mask, method, beta, critic,
                                        frozen);
  StepResult out;
  out.total = c.total;
  out.contrastive = c.contrastive;
  out.uv = c.uv;
  out.label = c.label;
  out.grads = zeros_like(params);
  backward_views(params, trace, c.d_z1_proj, c.d_z2_proj, c.d_z1_enc, c.d_z2_enc, out.grads);
  out.grads.uv_weights = c.d_uv;
  out.grads.label_head = c.d_label_head;
  for (std::size_t i = 0; i < out.grads.predictor.size(); ++i) {
    out.grads.predictor[i] = c.d_predictor[i];
  }
  return out;
}

}  // namespace fcl
