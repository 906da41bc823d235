// Self-validation suites used by tests and the `validate` subcommand:
//   * gradient suite — central finite differences against the analytic
//     parameter gradients of every loss variant, on randomized small
//     configurations, with three safeguards: configurations whose ReLU
//     pre-activations sit within 1e-6 of a kink are redrawn (the difference
//     quotient would straddle the non-differentiable point); configurations
//     where a row that later gets L2-normalized (projections, predictor
//     outputs) has norm below 1e-3 are redrawn as well, because the 1/norm
//     factor in the normalization derivative curves too sharply there for a
//     1e-7 step to resolve (dead ReLUs with zero biases can make such rows
//     exactly zero); and the UV rows of non-owning clients are excluded from
//     differencing because the local objective treats them as constants
//     (their analytic gradient must be exactly zero, which is asserted
//     separately);
//   * bound suite — the exact-enumeration oracle checks the two-view MI
//     decomposition and every inequality the objectives optimize.
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcl/grad_check.hpp"
#include "fcl/losses.hpp"
#include "fcl/mi_oracle.hpp"
#include "fcl/model.hpp"
#include "fcl/rng.hpp"

namespace fcl {

struct CheckResult {
  std::string name;
  bool pass = false;
  double observed = 0.0;   // worst value seen
  double threshold = 0.0;  // pass iff observed <= threshold (see note)
  std::string note;
};

// --- gradient suite ------------------------------------------------------------

struct GradVariant {
  const char* name;
  Method method;
  int mask_kind;  // 0 = all unlabelled, 1 = all labelled, 2 = alternating
};

inline const std::vector<GradVariant>& gradient_variants() {
  static const std::vector<GradVariant> variants = {
      {"local_simclr", Method::local_simclr, 0},
      {"federated_simclr", Method::federated_simclr, 0},
      {"spectral", Method::spectral, 0},
      {"spectral_uv", Method::spectral_uv, 0},
      {"simsiam", Method::simsiam, 0},
      {"simsiam_uv", Method::simsiam_uv, 0},
      {"supervised", Method::supervised, 1},
      {"federated_simclr_semi", Method::federated_simclr, 2},
  };
  return variants;
}

namespace detail {

inline double min_relu_margin(const std::vector<Layer>& layers, const MlpTrace& t) {
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
    for (double v : t.pres[i].data()) margin = std::min(margin, std::abs(v));
  }
  return margin;
}

inline double min_row_norm(const Matrix& m) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < m.cols(); ++c) s += m(r, c) * m(r, c);
    best = std::min(best, std::sqrt(s));
  }
  return best;
}

struct GradCase {
  ModelParams params;
  Matrix x1, x2;
  std::vector<int> labels;
  std::vector<std::uint8_t> mask;
  int client_id = 0;
  double beta = 1.0;
  Critic critic;
};

// Draws a random small configuration; returns false when the ReLU margin is
// too tight to difference safely and the caller should redraw.
inline bool draw_grad_case(const GradVariant& variant, Rng& rng, GradCase& out) {
  ModelDims dims;
  dims.input_dim = 3 + rng.uniform_int(6);
  dims.encoder_hidden = 4 + rng.uniform_int(5);
  dims.z_dim = 3 + rng.uniform_int(4);
  dims.proj_hidden = 4 + rng.uniform_int(4);
  dims.proj_dim = 2 + rng.uniform_int(4);
  dims.predictor_hidden = 3 + rng.uniform_int(4);
  const std::size_t clients = 2 + rng.uniform_int(4);
  const std::size_t classes = 2 + rng.uniform_int(3);
  const std::size_t K = 2 + rng.uniform_int(7);

  out.params = init_model(dims, clients, classes, method_has_predictor(variant.method), rng);
  out.x1 = Matrix(K, dims.input_dim);
  out.x2 = Matrix(K, dims.input_dim);
  for (double& v : out.x1.data()) v = rng.normal();
  for (double& v : out.x2.data()) v = rng.normal();
  out.labels.resize(K);
  for (auto& y : out.labels) y = static_cast<int>(rng.uniform_int(classes));
  out.mask.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    out.mask[k] = variant.mask_kind == 1 ? 1 : (variant.mask_kind == 2 ? (k % 2 == 0) : 0);
  }
  out.client_id = static_cast<int>(rng.uniform_int(clients));
  out.beta = rng.uniform(0.5, 2.0);
  out.critic.temperature = rng.uniform(0.3, 1.0);

  constexpr double kKinkMargin = 1e-6;
  constexpr double kNormMargin = 1e-3;
  const ForwardTrace t = forward_views(out.params, out.x1, out.x2);
  double margin = std::min(std::min(min_relu_margin(out.params.encoder, t.enc1),
                                    min_relu_margin(out.params.encoder, t.enc2)),
                           std::min(min_relu_margin(out.params.projector, t.proj1),
                                    min_relu_margin(out.params.projector, t.proj2)));
  double row_norm = std::min(min_row_norm(t.p1()), min_row_norm(t.p2()));
  if (method_has_predictor(variant.method)) {
    const MlpTrace pt1 = mlp_forward(out.params.predictor, t.p1());
    const MlpTrace pt2 = mlp_forward(out.params.predictor, t.p2());
    margin = std::min(margin, std::min(min_relu_margin(out.params.predictor, pt1),
                                       min_relu_margin(out.params.predictor, pt2)));
    row_norm = std::min(row_norm, std::min(min_row_norm(pt1.output()), min_row_norm(pt2.output())));
  }
  return margin > kKinkMargin && row_norm > kNormMargin;
}

}  // namespace detail

// Runs the finite-difference suite. `sabotage`, used only by tests, corrupts
// one analytic gradient coordinate of the first configuration to demonstrate
// that a wrong gradient is caught by name.
inline std::vector<CheckResult> run_gradient_suite(std::uint64_t seed,
                                                   int configs_per_variant = 20,
                                                   double sabotage = 0.0) {
  constexpr double kRelTol = 1e-4;
  constexpr double kStepH = 1e-7;
  std::vector<CheckResult> results;

  for (std::size_t vi = 0; vi < gradient_variants().size(); ++vi) {
    const GradVariant& variant = gradient_variants()[vi];
    double worst_rel = 0.0;
    double worst_masked = 0.0;
    for (int ci = 0; ci < configs_per_variant; ++ci) {
      detail::GradCase gc;
      std::uint64_t attempt = 0;
      for (;;) {
        Rng rng = Rng::derive(seed, "gradcheck", {vi, static_cast<std::uint64_t>(ci), attempt});
        if (detail::draw_grad_case(variant, rng, gc)) break;
        if (++attempt > 50) throw std::runtime_error("gradient suite: cannot avoid ReLU kink");
      }

      // Freeze the SimSiam cosine targets at the base point so differencing
      // matches the stop-gradient semantics of the analytic gradient.
      SimsiamTargets frozen;
      const SimsiamTargets* fp = nullptr;
      if (method_has_predictor(variant.method)) {
        const ForwardTrace t = forward_views(gc.params, gc.x1, gc.x2);
        frozen.t1 = t.p1();
        frozen.t2 = t.p2();
        fp = &frozen;
      }

      const StepResult base = loss_and_param_grads(gc.params, gc.x1, gc.x2, gc.labels, gc.mask,
                                                   gc.client_id, variant.method, gc.beta,
                                                   gc.critic, fp);
      std::vector<double> analytic = flatten(base.grads);
      if (sabotage != 0.0 && vi == 0 && ci == 0) analytic[0] += sabotage;

      std::vector<bool> skip(analytic.size(), false);
      if (method_has_uv(variant.method)) {
        for (std::size_t s = 0; s < gc.params.num_clients(); ++s) {
          if (static_cast<int>(s) == gc.client_id) continue;
          const auto [lo, hi] = uv_row_span(gc.params, s);
          for (std::size_t i = lo; i < hi; ++i) skip[i] = true;
        }
      }

      std::vector<double> flat = flatten(gc.params);
      std::vector<double> analytic_used, fd_used;
      analytic_used.reserve(flat.size());
      fd_used.reserve(flat.size());
      auto loss_at = [&](const std::vector<double>& v) {
        const ModelParams p = unflatten(gc.params, v);
        return loss_and_param_grads(p, gc.x1, gc.x2, gc.labels, gc.mask, gc.client_id,
                                    variant.method, gc.beta, gc.critic, fp)
            .total;
      };
      for (std::size_t i = 0; i < flat.size(); ++i) {
        if (skip[i]) {
          worst_masked = std::max(worst_masked, std::abs(analytic[i]));
          continue;
        }
        const double keep = flat[i];
        flat[i] = keep + kStepH;
        const double fp_val = loss_at(flat);
        flat[i] = keep - kStepH;
        const double fm_val = loss_at(flat);
        flat[i] = keep;
        fd_used.push_back((fp_val - fm_val) / (2.0 * kStepH));
        analytic_used.push_back(analytic[i]);
      }
      worst_rel = std::max(worst_rel, relative_error(analytic_used, fd_used));
    }
    CheckResult r;
    r.name = std::string("grad/") + variant.name;
    r.observed = worst_rel;
    r.threshold = kRelTol;
    r.pass = worst_rel < kRelTol;
    r.note = std::to_string(configs_per_variant) + " configs";
    results.push_back(r);
    if (method_has_uv(variant.method)) {
      CheckResult m;
      m.name = std::string("grad/") + variant.name + "/uv_rows_fixed";
      m.observed = worst_masked;
      m.threshold = 0.0;
      m.pass = worst_masked == 0.0;
      m.note = "non-owned uv rows have exactly zero gradient";
      results.push_back(m);
    }
  }
  return results;
}

// --- bound suite ------------------------------------------------------------------

inline CheckResult run_chain_rule_check(std::uint64_t seed, int num_joints = 100) {
  CheckResult r;
  r.name = "mi/chain_rule";
  r.threshold = 1e-10;
  double worst = 0.0;
  for (int i = 0; i < num_joints; ++i) {
    Rng rng = Rng::derive(seed, "chainrule", {static_cast<std::uint64_t>(i)});
    const std::vector<std::size_t> dims = {2 + rng.uniform_int(3), 2 + rng.uniform_int(3),
                                           2 + rng.uniform_int(3)};
    const DiscreteJoint j = random_joint(dims, rng);
    const double lhs = exact_mi(j, {1}, {2});
    const double rhs = exact_mi(j, {1}, {2}, {0}) + exact_mi(j, {1}, {0}) -
                       exact_mi(j, {1}, {0}, {2});
    worst = std::max(worst, std::abs(lhs - rhs));
  }
  r.observed = worst;
  r.pass = worst <= r.threshold;
  r.note = std::to_string(num_joints) + " random joints";
  return r;
}

inline std::vector<CheckResult> run_bound_suite(std::uint64_t seed, int cases = 50) {
  std::vector<CheckResult> results;
  results.push_back(run_chain_rule_check(seed));

  // Contrastive bound: worst signed violation of (estimate - true - 3 SE) and
  // of (estimate - log K); both must stay non-positive.
  {
    double worst_mi = -std::numeric_limits<double>::infinity();
    double worst_logk = -std::numeric_limits<double>::infinity();
    const std::size_t ks[] = {1, 2, 4, 8};
    for (int i = 0; i < cases; ++i) {
      Rng rng = Rng::derive(seed, "bound/contrastive", {static_cast<std::uint64_t>(i)});
      const std::vector<std::size_t> dims = {2 + rng.uniform_int(3), 2 + rng.uniform_int(3),
                                             2 + rng.uniform_int(3)};
      const DiscreteJoint j = random_joint(dims, rng);
      std::vector<Matrix> critics;
      if (i % 5 == 4) {
        critics = optimal_critics(j);
      } else {
        critics.assign(dims[0], Matrix(dims[1], dims[2]));
        for (auto& f : critics) {
          for (double& v : f.data()) v = rng.uniform(-2.0, 2.0);
        }
      }
      const InfoNceBoundReport rep =
          validate_infonce_bound(j, critics, ks[i % 4], 1500, rng);
      worst_mi = std::max(worst_mi,
                          rep.bound_estimate - rep.true_mi - 3.0 * rep.standard_error);
      worst_logk = std::max(worst_logk, rep.bound_estimate - rep.log_k);
    }
    CheckResult r;
    r.name = "bound/contrastive_vs_mi";
    r.observed = worst_mi;
    r.threshold = 0.0;
    r.pass = worst_mi <= 0.0;
    r.note = std::to_string(cases) + " joints x critics, 3 SE slack";
    results.push_back(r);
    CheckResult k;
    k.name = "bound/contrastive_vs_log_k";
    k.observed = worst_logk;
    k.threshold = 1e-9;
    k.pass = worst_logk <= 1e-9;
    k.note = "per-batch ceiling";
    results.push_back(k);
  }

  // Client-ID classifier bounds, arbitrary classifiers.
  {
    double worst_lower = -std::numeric_limits<double>::infinity();
    double worst_upper = -std::numeric_limits<double>::infinity();
    double worst_eq = 0.0;
    for (int i = 0; i < cases; ++i) {
      Rng rng = Rng::derive(seed, "bound/uv", {static_cast<std::uint64_t>(i)});
      const std::vector<std::size_t> dims = {2 + rng.uniform_int(3), 2 + rng.uniform_int(3),
                                             2 + rng.uniform_int(3)};
      const DiscreteJoint j = random_joint(dims, rng);
      const Matrix r1 = random_stochastic_rows(dims[1], dims[0], rng);
      const Matrix r2 = random_stochastic_rows(dims[2], dims[0], rng);
      const UvBoundsReport rep = validate_uv_bounds(j, r1, r2);
      worst_lower = std::max(worst_lower, rep.lower_bound - rep.i_z1_s);
      worst_upper = std::max(worst_upper, rep.i_z1_s_given_z2 - rep.upper_bound);
      const UvBoundsReport eq = validate_uv_bounds(j, true_posterior_s_given_z1(j), r2);
      worst_eq = std::max(worst_eq, std::abs(eq.lower_bound - eq.i_z1_s));
    }
    CheckResult lo;
    lo.name = "bound/client_id_lower";
    lo.observed = worst_lower;
    lo.threshold = 1e-12;
    lo.pass = worst_lower <= lo.threshold;
    lo.note = std::to_string(cases) + " joints x classifiers";
    results.push_back(lo);
    CheckResult up;
    up.name = "bound/excess_client_id_upper";
    up.observed = worst_upper;
    up.threshold = 1e-12;
    up.pass = worst_upper <= up.threshold;
    up.note = std::to_string(cases) + " joints x classifiers";
    results.push_back(up);
    CheckResult eq;
    eq.name = "bound/client_id_lower_tight_at_posterior";
    eq.observed = worst_eq;
    eq.threshold = 1e-12;
    eq.pass = worst_eq <= eq.threshold;
    eq.note = "gap at the true posterior";
    results.push_back(eq);
  }

  // Label-skew supervised bound.
  {
    double worst = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < cases; ++i) {
      Rng rng = Rng::derive(seed, "bound/supervised", {static_cast<std::uint64_t>(i)});
      const DiscreteJoint j =
          make_label_skew_joint(2 + rng.uniform_int(3), 2 + rng.uniform_int(3),
                                2 + rng.uniform_int(3), 2 + rng.uniform_int(3), rng);
      const Matrix r1 = random_stochastic_rows(j.dims[2], j.dims[0], rng);
      const Matrix r2 = random_stochastic_rows(j.dims[3], j.dims[0], rng);
      const SupervisedBoundReport rep = validate_supervised_bound(j, r1, r2);
      worst = std::max(worst, rep.rhs - rep.lhs);
    }
    CheckResult r;
    r.name = "bound/label_skew_supervised";
    r.observed = worst;
    r.threshold = 1e-12;
    r.pass = worst <= r.threshold;
    r.note = std::to_string(cases) + " factorized joints";
    results.push_back(r);
  }
  return results;
}

// --- report ---------------------------------------------------------------------

inline bool all_pass(const std::vector<CheckResult>& results) {
  for (const auto& r : results) {
    if (!r.pass) return false;
  }
  return true;
}

inline std::string format_report(const std::vector<CheckResult>& results) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-44s %14s %12s  %-6s %s\n", "check", "observed",
                "threshold", "status", "note");
  out += buf;
  out += std::string(100, '-') + "\n";
  for (const auto& r : results) {
    std::snprintf(buf, sizeof(buf), "%-44s %14.6g %12.4g  %-6s %s\n", r.name.c_str(),
                  r.observed, r.threshold, r.pass ? "PASS" : "FAIL", r.note.c_str());
    out += buf;
  }
  return out;
}

inline void write_report(const std::string& path, const std::vector<CheckResult>& results) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_report: cannot open " + path);
  os << format_report(results);
}

}  // namespace fcl
