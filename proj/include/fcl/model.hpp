// The trainable network: MLP encoder, MLP projector, optional SimSiam
// predictor, a bias-free unit-norm client-verification layer, and a linear
// label head. Forward passes record everything the exact reverse-mode
// backward needs; gradients are validated against finite differences in the
// test suite.
#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fcl/matrix.hpp"
#include "fcl/rng.hpp"
#include "fcl/serialize.hpp"

namespace fcl {

// One affine layer: y = x * w^T + b, with w shaped (out x in) and b (1 x out).
struct Layer {
  Matrix w;
  Matrix b;
};

struct ModelDims {
  std::size_t input_dim = 16;
  std::size_t encoder_hidden = 64;
  std::size_t z_dim = 32;
  std::size_t proj_hidden = 64;
  std::size_t proj_dim = 16;
  std::size_t predictor_hidden = 64;
};

// Activations recorded by one MLP forward pass. acts[0] is the input,
// acts[i+1] the output of layer i (ReLU applied on all but the last layer);
// pres[i] is layer i's pre-activation.
struct MlpTrace {
  std::vector<Matrix> acts;
  std::vector<Matrix> pres;
  const Matrix& output() const { return acts.back(); }
};

struct MlpGrads {
  std::vector<Layer> layers;
  Matrix d_input;
};

inline Matrix affine(const Matrix& x, const Layer& l) {
  if (x.cols() != l.w.cols()) {
    throw std::invalid_argument("affine: input dim " + std::to_string(x.cols()) +
                                " does not match layer fan-in " +
                                std::to_string(l.w.cols()));
  }
  Matrix y = matmul(x, transpose(l.w));
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += l.b(0, j);
  return y;
}

inline MlpTrace mlp_forward(const std::vector<Layer>& layers, const Matrix& x) {
  MlpTrace t;
  t.acts.push_back(x);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Matrix pre = affine(t.acts.back(), layers[i]);
    t.pres.push_back(pre);
    if (i + 1 < layers.size()) {
      for (double& v : pre.data()) v = v > 0.0 ? v : 0.0;
    }
    t.acts.push_back(std::move(pre));
  }
  return t;
}

inline MlpGrads mlp_backward(const std::vector<Layer>& layers, const MlpTrace& t,
                             const Matrix& d_out) {
  const std::size_t L = layers.size();
  MlpGrads g;
  g.layers.resize(L);
  Matrix d_act = d_out;
  for (std::size_t ii = L; ii-- > 0;) {
    Matrix d_pre = d_act;
    if (ii + 1 < L) {
      const Matrix& pre = t.pres[ii];
      for (std::size_t k = 0; k < d_pre.size(); ++k) {
        if (pre.data()[k] <= 0.0) d_pre.data()[k] = 0.0;
      }
    }
    g.layers[ii].w = matmul(transpose(d_pre), t.acts[ii]);
    g.layers[ii].b = Matrix(1, d_pre.cols());
    for (std::size_t r = 0; r < d_pre.rows(); ++r)
      for (std::size_t c = 0; c < d_pre.cols(); ++c) g.layers[ii].b(0, c) += d_pre(r, c);
    d_act = matmul(d_pre, layers[ii].w);
  }
  g.d_input = std::move(d_act);
  return g;
}

struct ModelParams {
  std::vector<Layer> encoder;
  std::vector<Layer> projector;
  std::vector<Layer> predictor;  // empty unless the method is SimSiam-style
  Matrix uv_weights;             // (num_clients x proj_dim), unit rows, no bias
  Layer label_head;              // (num_classes x z_dim) + bias

  std::size_t input_dim() const { return encoder.front().w.cols(); }
  std::size_t z_dim() const { return encoder.back().w.rows(); }
  std::size_t proj_dim() const { return projector.back().w.rows(); }
  std::size_t num_clients() const { return uv_weights.rows(); }
  std::size_t num_classes() const { return label_head.w.rows(); }
};

namespace detail {

template <typename Params, typename Fn>
void for_each_matrix(Params& p, Fn&& fn) {
  for (auto& l : p.encoder) {
    fn(l.w);
    fn(l.b);
  }
  for (auto& l : p.projector) {
    fn(l.w);
    fn(l.b);
  }
  for (auto& l : p.predictor) {
    fn(l.w);
    fn(l.b);
  }
  fn(p.uv_weights);
  fn(p.label_head.w);
  fn(p.label_head.b);
}

inline Layer init_layer(std::size_t fan_out, std::size_t fan_in, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Layer l{Matrix(fan_out, fan_in), Matrix(1, fan_out)};
  for (double& v : l.w.data()) v = rng.uniform(-a, a);
  return l;
}

}  // namespace detail

// Renormalizes every row of uv_weights to unit L2 norm.
inline void project_uv_rows(ModelParams& p, double eps = 1e-12) {
  p.uv_weights = row_l2_normalize(p.uv_weights, eps);
}

inline ModelParams init_model(const ModelDims& d, std::size_t num_clients,
                              std::size_t num_classes, bool with_predictor,
                              Rng& rng) {
  ModelParams p;
  p.encoder.push_back(detail::init_layer(d.encoder_hidden, d.input_dim, rng));
  p.encoder.push_back(detail::init_layer(d.z_dim, d.encoder_hidden, rng));
  p.projector.push_back(detail::init_layer(d.proj_hidden, d.z_dim, rng));
  p.projector.push_back(detail::init_layer(d.proj_dim, d.proj_hidden, rng));
  if (with_predictor) {
    p.predictor.push_back(detail::init_layer(d.predictor_hidden, d.proj_dim, rng));
    p.predictor.push_back(detail::init_layer(d.proj_dim, d.predictor_hidden, rng));
  }
  p.uv_weights = Matrix(num_clients, d.proj_dim);
  for (double& v : p.uv_weights.data()) v = rng.normal();
  project_uv_rows(p);
  p.label_head = detail::init_layer(num_classes, d.z_dim, rng);
  return p;
}

inline std::size_t param_count(const ModelParams& p) {
  std::size_t n = 0;
  detail::for_each_matrix(const_cast<ModelParams&>(p),
                          [&](const Matrix& m) { n += m.size(); });
  return n;
}

inline std::vector<double> flatten(const ModelParams& p) {
  std::vector<double> v;
  v.reserve(param_count(p));
  detail::for_each_matrix(const_cast<ModelParams&>(p), [&](const Matrix& m) {
    v.insert(v.end(), m.data().begin(), m.data().end());
  });
  return v;
}

// Rebuilds parameters with the shapes of `shape` from a flat vector.
inline ModelParams unflatten(const ModelParams& shape, const std::vector<double>& v) {
  if (v.size() != param_count(shape)) {
    throw std::invalid_argument("unflatten: flat vector length mismatch");
  }
  ModelParams p = shape;
  std::size_t off = 0;
  detail::for_each_matrix(p, [&](Matrix& m) {
    std::copy(v.begin() + off, v.begin() + off + m.size(), m.data().begin());
    off += m.size();
  });
  return p;
}

// Zero-valued gradient container with the same shapes as `shape`.
inline ModelParams zeros_like(const ModelParams& shape) {
  ModelParams p = shape;
  detail::for_each_matrix(p, [](Matrix& m) { std::fill(m.data().begin(), m.data().end(), 0.0); });
  return p;
}

inline void axpy(ModelParams& dst, double a, const ModelParams& x) {
  auto flat_x = flatten(x);
  std::size_t off = 0;
  detail::for_each_matrix(dst, [&](Matrix& m) {
    for (double& v : m.data()) v += a * flat_x[off++];
  });
}

// Coordinate span of uv row `client` inside the flat parameter vector.
inline std::pair<std::size_t, std::size_t> uv_row_span(const ModelParams& p,
                                                       std::size_t client) {
  std::size_t off = 0;
  for (const auto& l : p.encoder) off += l.w.size() + l.b.size();
  for (const auto& l : p.projector) off += l.w.size() + l.b.size();
  for (const auto& l : p.predictor) off += l.w.size() + l.b.size();
  const std::size_t d = p.uv_weights.cols();
  return {off + client * d, off + (client + 1) * d};
}

// --- forward / backward over the two-view pipeline -------------------------

struct ForwardTrace {
  MlpTrace enc1, enc2;
  MlpTrace proj1, proj2;
  const Matrix& z1() const { return enc1.output(); }
  const Matrix& z2() const { return enc2.output(); }
  const Matrix& p1() const { return proj1.output(); }
  const Matrix& p2() const { return proj2.output(); }
};

// Single-view encoder + projector pass (evaluation, spec examples).
struct EncoderTrace {
  MlpTrace enc;
  MlpTrace proj;
  const Matrix& z() const { return enc.output(); }
  const Matrix& projection() const { return proj.output(); }
};

// Cosine logits between the normalized projections and the unit-norm client
// rows; entries live in [-1, 1] because both sides are unit vectors.
inline Matrix uv_logits(const ModelParams& p, const Matrix& z_proj) {
  return matmul(row_l2_normalize(z_proj), transpose(p.uv_weights));
}

inline EncoderTrace forward_encoder(const ModelParams& p, const Matrix& x) {
  EncoderTrace t;
  t.enc = mlp_forward(p.encoder, x);
  t.proj = mlp_forward(p.projector, t.enc.output());
  return t;
}

inline ForwardTrace forward_views(const ModelParams& p, const Matrix& x1,
                                  const Matrix& x2) {
  ForwardTrace t;
  t.enc1 = mlp_forward(p.encoder, x1);
  t.enc2 = mlp_forward(p.encoder, x2);
  t.proj1 = mlp_forward(p.projector, t.enc1.output());
  t.proj2 = mlp_forward(p.projector, t.enc2.output());
  return t;
}

// Accumulates encoder/projector gradients into `grads` given upstream
// gradients w.r.t. the two projections and (optionally, for the label head
// path) w.r.t. the two encoder outputs directly.
inline void backward_views(const ModelParams& p, const ForwardTrace& t,
                           const Matrix& d_p1, const Matrix& d_p2,
                           const Matrix& d_z1_direct, const Matrix& d_z2_direct,
                           ModelParams& grads) {
  auto accumulate = [](std::vector<Layer>& dst, const std::vector<Layer>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) {
      dst[i].w += src[i].w;
      dst[i].b += src[i].b;
    }
  };
  MlpGrads gp1 = mlp_backward(p.projector, t.proj1, d_p1);
  MlpGrads gp2 = mlp_backward(p.projector, t.proj2, d_p2);
  accumulate(grads.projector, gp1.layers);
  accumulate(grads.projector, gp2.layers);
  Matrix d_z1 = gp1.d_input;
  Matrix d_z2 = gp2.d_input;
  if (!d_z1_direct.empty()) d_z1 += d_z1_direct;
  if (!d_z2_direct.empty()) d_z2 += d_z2_direct;
  MlpGrads ge1 = mlp_backward(p.encoder, t.enc1, d_z1);
  MlpGrads ge2 = mlp_backward(p.encoder, t.enc2, d_z2);
  accumulate(grads.encoder, ge1.layers);
  accumulate(grads.encoder, ge2.layers);
}

// --- checkpoint format ------------------------------------------------------
//
// "FCLP" | u32 version | u32 n_encoder | u32 n_projector | u32 n_predictor |
// per matrix in flatten order: u64 rows, u64 cols | f64 little-endian data
// in flatten order.

inline void save_checkpoint(const ModelParams& p, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  io::write_magic(os, "FCLP");
  io::write_u32(os, 1);
  io::write_u32(os, static_cast<std::uint32_t>(p.encoder.size()));
  io::write_u32(os, static_cast<std::uint32_t>(p.projector.size()));
  io::write_u32(os, static_cast<std::uint32_t>(p.predictor.size()));
  detail::for_each_matrix(const_cast<ModelParams&>(p), [&](const Matrix& m) {
    io::write_u64(os, m.rows());
    io::write_u64(os, m.cols());
  });
  detail::for_each_matrix(const_cast<ModelParams&>(p), [&](const Matrix& m) {
    for (double v : m.data()) io::write_f64(os, v);
  });
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  io::expect_magic(is, "FCLP", "load_checkpoint");
  const std::uint32_t version = io::read_u32(is);
  if (version != 1) throw std::runtime_error("load_checkpoint: unsupported version");
  ModelParams p;
  p.encoder.resize(io::read_u32(is));
  p.projector.resize(io::read_u32(is));
  p.predictor.resize(io::read_u32(is));
  detail::for_each_matrix(p, [&](Matrix& m) {
    const std::uint64_t r = io::read_u64(is);
    const std::uint64_t c = io::read_u64(is);
    m = Matrix(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
  });
  detail::for_each_matrix(p, [&](Matrix& m) {
    for (double& v : m.data()) v = io::read_f64(is);
  });
  return p;
}

}  // namespace fcl
