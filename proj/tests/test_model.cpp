#include "fcl/model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcl/grad_check.hpp"
#include "fcl/rng.hpp"

namespace fcl {
namespace {

ModelDims small_dims() {
  ModelDims d;
  d.input_dim = 5;
  d.encoder_hidden = 7;
  d.z_dim = 4;
  d.proj_hidden = 6;
  d.proj_dim = 3;
  d.predictor_hidden = 5;
  return d;
}

std::string temp_path(const char* name) {
  return std::string(::testing::TempDir()) + name;
}

TEST(Mlp, ZeroWeightsGiveZeroOutput) {
  std::vector<Layer> layers = {{Matrix(4, 3), Matrix(1, 4)}, {Matrix(2, 4), Matrix(1, 2)}};
  Rng rng(1);
  Matrix x(5, 3);
  for (double& v : x.data()) v = rng.normal();
  const Matrix out = mlp_forward(layers, x).output();
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Mlp, SingleIdentityLayerPassesInputThrough) {
  std::vector<Layer> layers = {{Matrix::identity(3), Matrix(1, 3)}};
  Rng rng(2);
  Matrix x(4, 3);
  for (double& v : x.data()) v = rng.normal();
  EXPECT_EQ(mlp_forward(layers, x).output(), x);
}

TEST(Mlp, HandComputedTwoLayerForward) {
  // Layer 1: w = [[1, -1], [2, 0]], b = [0.5, -3]; ReLU; layer 2: w = [[1, 1]], b = [0.25].
  std::vector<Layer> layers = {
      {Matrix::from_rows({{1, -1}, {2, 0}}), Matrix::from_rows({{0.5, -3}})},
      {Matrix::from_rows({{1, 1}}), Matrix::from_rows({{0.25}})}};
  const Matrix x = Matrix::from_rows({{2, 1}});
  // pre1 = (2*1 + 1*-1 + 0.5, 2*2 + 0 - 3) = (1.5, 1); relu keeps both.
  // out  = 1.5 + 1 + 0.25 = 2.75.
  const MlpTrace t = mlp_forward(layers, x);
  EXPECT_DOUBLE_EQ(t.pres[0](0, 0), 1.5);
  EXPECT_DOUBLE_EQ(t.pres[0](0, 1), 1.0);
  EXPECT_DOUBLE_EQ(t.output()(0, 0), 2.75);

  // Negative pre-activation is clamped: x = (0, 4) gives pre1 = (-3.5, -3),
  // both clipped, so the output is just the final bias.
  const MlpTrace t2 = mlp_forward(layers, Matrix::from_rows({{0, 4}}));
  EXPECT_DOUBLE_EQ(t2.output()(0, 0), 0.25);
}

TEST(Mlp, AffineRejectsWrongInputWidth) {
  const Layer l{Matrix(4, 3), Matrix(1, 4)};
  EXPECT_THROW(affine(Matrix(2, 2), l), std::invalid_argument);
}

TEST(Mlp, LinearModelGradientIsClosedForm) {
  // Single linear layer, squared loss: d_w = 2 (w x^T + b - y) x, d_b = 2 (pred - y).
  std::vector<Layer> layers = {{Matrix::from_rows({{0.5, -1.0}}), Matrix::from_rows({{0.2}})}};
  const Matrix x = Matrix::from_rows({{1.0, 2.0}});
  const double target = 3.0;
  const MlpTrace t = mlp_forward(layers, x);
  const double pred = t.output()(0, 0);  // 0.5 - 2 + 0.2 = -1.3
  EXPECT_DOUBLE_EQ(pred, -1.3);
  Matrix d_out(1, 1);
  d_out(0, 0) = 2.0 * (pred - target);
  const MlpGrads g = mlp_backward(layers, t, d_out);
  EXPECT_DOUBLE_EQ(g.layers[0].w(0, 0), 2.0 * (pred - target) * 1.0);
  EXPECT_DOUBLE_EQ(g.layers[0].w(0, 1), 2.0 * (pred - target) * 2.0);
  EXPECT_DOUBLE_EQ(g.layers[0].b(0, 0), 2.0 * (pred - target));
  EXPECT_DOUBLE_EQ(g.d_input(0, 0), 2.0 * (pred - target) * 0.5);
}

TEST(Mlp, ZeroUpstreamGradientGivesZeroParameterGradient) {
  Rng rng(3);
  const ModelParams p = init_model(small_dims(), 2, 3, false, rng);
  Matrix x(3, 5);
  for (double& v : x.data()) v = rng.normal();
  const MlpTrace t = mlp_forward(p.encoder, x);
  const MlpGrads g = mlp_backward(p.encoder, t, Matrix(3, 4));
  for (const Layer& l : g.layers) {
    for (double v : l.w.data()) EXPECT_EQ(v, 0.0);
    for (double v : l.b.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Model, InitShapesAndBounds) {
  Rng rng(4);
  const ModelDims d = small_dims();
  const ModelParams p = init_model(d, 6, 3, true, rng);
  ASSERT_EQ(p.encoder.size(), 2u);
  ASSERT_EQ(p.projector.size(), 2u);
  ASSERT_EQ(p.predictor.size(), 2u);
  EXPECT_EQ(p.input_dim(), d.input_dim);
  EXPECT_EQ(p.z_dim(), d.z_dim);
  EXPECT_EQ(p.proj_dim(), d.proj_dim);
  EXPECT_EQ(p.num_clients(), 6u);
  EXPECT_EQ(p.num_classes(), 3u);

  auto check_layer = [](const Layer& l) {
    const double a =
        std::sqrt(6.0 / static_cast<double>(l.w.rows() + l.w.cols()));
    for (double v : l.w.data()) {
      EXPECT_LE(std::abs(v), a);
    }
    for (double v : l.b.data()) EXPECT_EQ(v, 0.0);
  };
  for (const Layer& l : p.encoder) check_layer(l);
  for (const Layer& l : p.projector) check_layer(l);
  for (const Layer& l : p.predictor) check_layer(l);
  check_layer(p.label_head);

  for (std::size_t s = 0; s < p.uv_weights.rows(); ++s) {
    EXPECT_NEAR(row_norm(p.uv_weights, s), 1.0, 1e-12);
  }

  const ModelParams q = init_model(d, 6, 3, false, rng);
  EXPECT_TRUE(q.predictor.empty());
}

TEST(Model, InitIsSeedDeterministic) {
  Rng a(11), b(11);
  const ModelParams p = init_model(small_dims(), 4, 3, true, a);
  const ModelParams q = init_model(small_dims(), 4, 3, true, b);
  EXPECT_EQ(flatten(p), flatten(q));
}

TEST(Model, FlattenUnflattenRoundTripIsExact) {
  Rng rng(5);
  const ModelParams p = init_model(small_dims(), 3, 4, true, rng);
  const std::vector<double> flat = flatten(p);
  EXPECT_EQ(flat.size(), param_count(p));
  const ModelParams q = unflatten(p, flat);
  EXPECT_EQ(flatten(q), flat);
  EXPECT_EQ(q.uv_weights, p.uv_weights);
  EXPECT_EQ(q.label_head.w, p.label_head.w);

  std::vector<double> wrong(flat.size() + 1, 0.0);
  EXPECT_THROW(unflatten(p, wrong), std::invalid_argument);
}

TEST(Model, UvRowSpanAddressesTheRightCoordinates) {
  Rng rng(6);
  const ModelParams p = init_model(small_dims(), 4, 3, true, rng);
  const std::vector<double> flat = flatten(p);
  for (std::size_t s = 0; s < 4; ++s) {
    const auto [lo, hi] = uv_row_span(p, s);
    ASSERT_EQ(hi - lo, p.uv_weights.cols());
    for (std::size_t j = 0; j < p.uv_weights.cols(); ++j) {
      EXPECT_EQ(flat[lo + j], p.uv_weights(s, j));
    }
  }
}

TEST(Model, AxpyMatchesFlatArithmetic) {
  Rng rng(7);
  ModelParams p = init_model(small_dims(), 2, 3, false, rng);
  const ModelParams q = init_model(small_dims(), 2, 3, false, rng);
  const std::vector<double> fp = flatten(p), fq = flatten(q);
  axpy(p, -0.25, q);
  const std::vector<double> fr = flatten(p);
  for (std::size_t i = 0; i < fr.size(); ++i) {
    EXPECT_DOUBLE_EQ(fr[i], fp[i] - 0.25 * fq[i]);
  }
}

TEST(Model, ZerosLikeIsAllZero) {
  Rng rng(8);
  const ModelParams p = init_model(small_dims(), 2, 3, true, rng);
  const ModelParams z = zeros_like(p);
  EXPECT_EQ(param_count(z), param_count(p));
  for (double v : flatten(z)) EXPECT_EQ(v, 0.0);
}

TEST(Model, UvLogitsHandComputed) {
  Rng rng(9);
  ModelParams p = init_model(small_dims(), 2, 3, false, rng);
  p.uv_weights = Matrix::from_rows({{1, 0, 0}, {0, 1, 0}});
  // Projection aligned with client 0's row (any positive scale) gives cosine
  // 1 against row 0 and 0 against row 1; an orthogonal projection gives 0.
  const Matrix z = Matrix::from_rows({{2.5, 0, 0}, {0, 0, -3.0}});
  const Matrix logits = uv_logits(p, z);
  EXPECT_DOUBLE_EQ(logits(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(logits(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(logits(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(logits(1, 1), 0.0);
  for (double v : logits.data()) {
    EXPECT_LE(v, 1.0);
    EXPECT_GE(v, -1.0);
  }
}

TEST(Model, UvLogitsStayInCosineRange) {
  Rng rng(10);
  const ModelParams p = init_model(small_dims(), 5, 3, false, rng);
  Matrix z(8, 3);
  for (double& v : z.data()) v = 10.0 * rng.normal();
  const Matrix logits = uv_logits(p, z);
  for (double v : logits.data()) {
    EXPECT_LE(v, 1.0 + 1e-12);
    EXPECT_GE(v, -1.0 - 1e-12);
  }
}

TEST(Model, ProjectUvRowsRestoresUnitNorm) {
  Rng rng(12);
  ModelParams p = init_model(small_dims(), 3, 2, false, rng);
  for (double& v : p.uv_weights.data()) v *= 3.7;
  project_uv_rows(p);
  for (std::size_t s = 0; s < 3; ++s) EXPECT_NEAR(row_norm(p.uv_weights, s), 1.0, 1e-12);
  // And a second projection changes nothing at all.
  const Matrix before = p.uv_weights;
  project_uv_rows(p);
  EXPECT_EQ(p.uv_weights, before);
}

TEST(Model, ForwardViewsMatchesSingleViewPasses) {
  Rng rng(13);
  const ModelParams p = init_model(small_dims(), 2, 3, false, rng);
  Matrix x1(4, 5), x2(4, 5);
  for (double& v : x1.data()) v = rng.normal();
  for (double& v : x2.data()) v = rng.normal();
  const ForwardTrace t = forward_views(p, x1, x2);
  const EncoderTrace s1 = forward_encoder(p, x1);
  const EncoderTrace s2 = forward_encoder(p, x2);
  EXPECT_EQ(t.z1(), s1.z());
  EXPECT_EQ(t.p1(), s1.projection());
  EXPECT_EQ(t.z2(), s2.z());
  EXPECT_EQ(t.p2(), s2.projection());
}

TEST(Model, BackwardViewsMatchesFiniteDifferences) {
  // Scalar objective: sum of projections plus sum of encoder outputs, so both
  // the projection path and the direct encoder path are exercised.
  Rng rng(14);
  const ModelParams p = init_model(small_dims(), 2, 3, false, rng);
  Matrix x1(3, 5), x2(3, 5);
  for (double& v : x1.data()) v = rng.normal();
  for (double& v : x2.data()) v = rng.normal();

  const auto loss_at = [&](const ModelParams& q) {
    const ForwardTrace t = forward_views(q, x1, x2);
    double s = 0.0;
    for (double v : t.p1().data()) s += v;
    for (double v : t.p2().data()) s += v;
    for (double v : t.z1().data()) s += 0.5 * v;
    for (double v : t.z2().data()) s += 0.5 * v;
    return s;
  };

  const ForwardTrace t = forward_views(p, x1, x2);
  ModelParams grads = zeros_like(p);
  Matrix ones_p(3, 3), half_z(3, 4);
  for (double& v : ones_p.data()) v = 1.0;
  for (double& v : half_z.data()) v = 0.5;
  backward_views(p, t, ones_p, ones_p, half_z, half_z, grads);

  const ScalarFn f = [&](const std::vector<double>& flat) {
    return loss_at(unflatten(p, flat));
  };
  const std::vector<double> fd = finite_diff_grad(f, flatten(p), 1e-6);
  EXPECT_LT(relative_error(flatten(grads), fd), 1e-5);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(15);
  const ModelParams p = init_model(small_dims(), 4, 3, true, rng);
  const std::string path = temp_path("ckpt_roundtrip.bin");
  save_checkpoint(p, path);
  const ModelParams q = load_checkpoint(path);
  EXPECT_EQ(flatten(q), flatten(p));
  EXPECT_EQ(q.encoder.size(), p.encoder.size());
  EXPECT_EQ(q.predictor.size(), p.predictor.size());
  EXPECT_EQ(q.uv_weights.rows(), p.uv_weights.rows());
  std::remove(path.c_str());
}

TEST(Checkpoint, NoPredictorRoundTrip) {
  Rng rng(16);
  const ModelParams p = init_model(small_dims(), 2, 5, false, rng);
  const std::string path = temp_path("ckpt_nopred.bin");
  save_checkpoint(p, path);
  EXPECT_EQ(flatten(load_checkpoint(path)), flatten(p));
  std::remove(path.c_str());
}

TEST(Checkpoint, MissingFileThrows) {
  EXPECT_THROW(load_checkpoint(temp_path("does_not_exist.bin")), std::runtime_error);
}

TEST(Checkpoint, BadMagicThrows) {
  const std::string path = temp_path("ckpt_badmagic.bin");
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOPE0000000000000000";
  }
  EXPECT_THROW(load_checkpoint(path), std::runtime_error);
  std::remove(path.c_str());
}

TEST(Checkpoint, TruncatedFileThrows) {
  Rng rng(17);
  const ModelParams p = init_model(small_dims(), 2, 3, false, rng);
  const std::string full = temp_path("ckpt_full.bin");
  save_checkpoint(p, full);
  std::ifstream is(full, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  is.close();
  const std::string cut = temp_path("ckpt_cut.bin");
  {
    std::ofstream os(cut, std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  EXPECT_THROW(load_checkpoint(cut), std::runtime_error);
  std::remove(full.c_str());
  std::remove(cut.c_str());
}

}  // namespace
}  // namespace fcl
