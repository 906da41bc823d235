// Exact information-theoretic quantities on small discrete joints, by brute
// enumeration in nats, plus numerical validators for the identities and
// bounds the training objectives rely on: the three-term decomposition of
// the two-view MI, the K-sample contrastive lower bound, the client-ID
// classifier bounds, and the label-skew supervised bound.
//
// Convention: a joint over (s, z1, z2) uses variable indices 0, 1, 2; a joint
// over (s, y, z1, z2) uses 0, 1, 2, 3. All logs are natural; 0*log 0 = 0.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcl/matrix.hpp"
#include "fcl/rng.hpp"

namespace fcl {

struct DiscreteJoint {
  std::vector<std::size_t> dims;
  std::vector<double> probs;  // row-major over dims

  std::size_t cells() const {
    std::size_t n = 1;
    for (std::size_t d : dims) n *= d;
    return n;
  }

  // Decomposes a flat cell index into per-variable coordinates.
  void coords_of(std::size_t flat, std::vector<std::size_t>& out) const {
    out.resize(dims.size());
    for (std::size_t v = dims.size(); v-- > 0;) {
      out[v] = flat % dims[v];
      flat /= dims[v];
    }
  }

  void validate() const {
    if (dims.empty()) throw std::invalid_argument("joint: no variables");
    for (std::size_t d : dims) {
      if (d < 1 || d > 8) throw std::invalid_argument("joint: variable dims must be in [1, 8]");
    }
    if (probs.size() != cells()) throw std::invalid_argument("joint: table size mismatch");
    double total = 0.0;
    for (double p : probs) {
      if (p < 0.0) throw std::invalid_argument("joint: negative probability");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-12) {
      throw std::invalid_argument("joint: probabilities must sum to 1");
    }
  }
};

namespace mi {

// Marginal table over the given variables (in the given order).
inline std::vector<double> marginal(const DiscreteJoint& j, const std::vector<std::size_t>& vars) {
  std::size_t size = 1;
  for (std::size_t v : vars) size *= j.dims[v];
  std::vector<double> table(size, 0.0);
  std::vector<std::size_t> c;
  for (std::size_t flat = 0; flat < j.cells(); ++flat) {
    if (j.probs[flat] == 0.0) continue;
    j.coords_of(flat, c);
    std::size_t idx = 0;
    for (std::size_t v : vars) idx = idx * j.dims[v] + c[v];
    table[idx] += j.probs[flat];
  }
  return table;
}

inline std::size_t index_into(const DiscreteJoint& j, const std::vector<std::size_t>& vars,
                              const std::vector<std::size_t>& coords) {
  std::size_t idx = 0;
  for (std::size_t v : vars) idx = idx * j.dims[v] + coords[v];
  return idx;
}

}  // namespace mi

// I(A; B | C) in nats by exact enumeration. C may be empty for plain MI, and
// the joint may contain additional variables, which are marginalized out.
inline double exact_mi(const DiscreteJoint& j, std::vector<std::size_t> vars_a,
                       std::vector<std::size_t> vars_b, std::vector<std::size_t> cond = {}) {
  j.validate();
  std::vector<std::size_t> all;
  all.insert(all.end(), vars_a.begin(), vars_a.end());
  all.insert(all.end(), vars_b.begin(), vars_b.end());
  all.insert(all.end(), cond.begin(), cond.end());
  std::vector<std::size_t> sorted = all;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw std::invalid_argument("exact_mi: variable sets overlap");
  }
  for (std::size_t v : sorted) {
    if (v >= j.dims.size()) throw std::invalid_argument("exact_mi: variable index out of range");
  }

  std::vector<std::size_t> ac = vars_a, bc = vars_b;
  ac.insert(ac.end(), cond.begin(), cond.end());
  bc.insert(bc.end(), cond.begin(), cond.end());
  const std::vector<double> p_abc = mi::marginal(j, all);
  const std::vector<double> p_ac = mi::marginal(j, ac);
  const std::vector<double> p_bc = mi::marginal(j, bc);
  const std::vector<double> p_c = cond.empty() ? std::vector<double>{1.0} : mi::marginal(j, cond);

  double total = 0.0;
  std::vector<std::size_t> c;
  for (std::size_t flat = 0; flat < j.cells(); ++flat) {
    if (j.probs[flat] == 0.0) continue;
    j.coords_of(flat, c);
    const double pabc = p_abc[mi::index_into(j, all, c)];
    if (pabc == 0.0) continue;
    const double pc = cond.empty() ? 1.0 : p_c[mi::index_into(j, cond, c)];
    const double pac = p_ac[mi::index_into(j, ac, c)];
    const double pbc = p_bc[mi::index_into(j, bc, c)];
    // Summing p(cell) * log-ratio over full cells groups to p(a,b,c) per
    // distinct (a, b, c), so extra variables marginalize out correctly.
    total += j.probs[flat] * std::log((pabc * pc) / (pac * pbc));
  }
  return total;
}

inline double entropy(const DiscreteJoint& j, const std::vector<std::size_t>& vars) {
  const std::vector<double> p = mi::marginal(j, vars);
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

// --- random generators ------------------------------------------------------------

inline DiscreteJoint random_joint(const std::vector<std::size_t>& dims, Rng& rng) {
  DiscreteJoint j;
  j.dims = dims;
  j.probs.resize(j.cells());
  double total = 0.0;
  for (double& p : j.probs) {
    p = rng.uniform();
    total += p;
  }
  for (double& p : j.probs) p /= total;
  // Exact renormalization residue lands on the largest cell.
  double sum = 0.0;
  for (double p : j.probs) sum += p;
  auto it = std::max_element(j.probs.begin(), j.probs.end());
  *it += 1.0 - sum;
  return j;
}

// Row-stochastic matrix with strictly positive entries (a random classifier
// or conditional table).
inline Matrix random_stochastic_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    double total = 0.0;
    for (std::size_t k = 0; k < cols; ++k) {
      m(i, k) = rng.uniform() + 1e-6;
      total += m(i, k);
    }
    for (std::size_t k = 0; k < cols; ++k) m(i, k) /= total;
  }
  return m;
}

// Joint with the label-skew factorization p(s) p(y|s) p(z1|y) p(z2|y):
// client and views are independent given the label, and the two views are
// conditionally independent.
inline DiscreteJoint make_label_skew_joint(std::size_t S, std::size_t Y, std::size_t Z1,
                                           std::size_t Z2, Rng& rng) {
  const Matrix p_y_given_s = random_stochastic_rows(S, Y, rng);
  const Matrix p_z1_given_y = random_stochastic_rows(Y, Z1, rng);
  const Matrix p_z2_given_y = random_stochastic_rows(Y, Z2, rng);
  const Matrix p_s = random_stochastic_rows(1, S, rng);
  DiscreteJoint j;
  j.dims = {S, Y, Z1, Z2};
  j.probs.resize(j.cells());
  std::size_t flat = 0;
  double total = 0.0;
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t y = 0; y < Y; ++y) {
      for (std::size_t z1 = 0; z1 < Z1; ++z1) {
        for (std::size_t z2 = 0; z2 < Z2; ++z2, ++flat) {
          j.probs[flat] = p_s(0, s) * p_y_given_s(s, y) * p_z1_given_y(y, z1) *
                          p_z2_given_y(y, z2);
          total += j.probs[flat];
        }
      }
    }
  }
  auto it = std::max_element(j.probs.begin(), j.probs.end());
  *it += 1.0 - total;
  return j;
}

// --- contrastive bound validation ----------------------------------------------------

struct InfoNceBoundReport {
  double bound_estimate = 0.0;
  double standard_error = 0.0;
  double true_mi = 0.0;      // I(z1; z2 | s)
  double log_k = 0.0;
  bool holds = false;        // estimate <= true MI + 3 SE and <= log K
};

// Monte-Carlo estimate of the K-sample contrastive bound on I(z1; z2 | s)
// under the joint, for per-client critic tables f[s](z1, z2). Each draw picks
// a client, samples K i.i.d. positive pairs from p(z1, z2 | s), and scores
// positives against in-batch negatives.
inline InfoNceBoundReport validate_infonce_bound(const DiscreteJoint& joint,
                                                 const std::vector<Matrix>& critics,
                                                 std::size_t K, std::size_t num_draws,
                                                 Rng& rng) {
  joint.validate();
  if (joint.dims.size() != 3) throw std::invalid_argument("infonce bound: need (s, z1, z2) joint");
  if (K < 1) throw std::invalid_argument("infonce bound: K must be >= 1");
  const std::size_t S = joint.dims[0];
  const std::size_t Z1 = joint.dims[1];
  const std::size_t Z2 = joint.dims[2];
  if (critics.size() != S) throw std::invalid_argument("infonce bound: need one critic per client");

  const std::vector<double> p_s = mi::marginal(joint, {0});
  // p(z1, z2 | s) flattened per client.
  std::vector<std::vector<double>> pair_given_s(S, std::vector<double>(Z1 * Z2, 0.0));
  std::vector<std::size_t> c;
  for (std::size_t flat = 0; flat < joint.cells(); ++flat) {
    joint.coords_of(flat, c);
    if (p_s[c[0]] > 0.0) pair_given_s[c[0]][c[1] * Z2 + c[2]] = joint.probs[flat] / p_s[c[0]];
  }

  InfoNceBoundReport rep;
  rep.true_mi = exact_mi(joint, {1}, {2}, {0});
  rep.log_k = std::log(static_cast<double>(K));

  double sum = 0.0, sum_sq = 0.0;
  std::vector<std::size_t> zs1(K), zs2(K);
  for (std::size_t d = 0; d < num_draws; ++d) {
    const std::size_t s = rng.categorical(p_s);
    const Matrix& f = critics[s];
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t pair = rng.categorical(pair_given_s[s]);
      zs1[k] = pair / Z2;
      zs2[k] = pair % Z2;
    }
    double value = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t jx = 0; jx < K; ++jx) m = std::max(m, f(zs1[jx], zs2[k]));
      double denom = 0.0;
      for (std::size_t jx = 0; jx < K; ++jx) denom += std::exp(f(zs1[jx], zs2[k]) - m);
      value += f(zs1[k], zs2[k]) - (m + std::log(denom / K));
    }
    value /= K;
    sum += value;
    sum_sq += value * value;
  }
  const double n = static_cast<double>(num_draws);
  rep.bound_estimate = sum / n;
  const double var = std::max(0.0, (sum_sq - sum * sum / n) / std::max(1.0, n - 1.0));
  rep.standard_error = std::sqrt(var / n);
  rep.holds = rep.bound_estimate <= rep.true_mi + 3.0 * rep.standard_error &&
              rep.bound_estimate <= rep.log_k + 1e-9;
  return rep;
}

// Per-client critic maximizing the bound: f_s(z1, z2) = log p(z1 | z2, s).
inline std::vector<Matrix> optimal_critics(const DiscreteJoint& joint) {
  const std::size_t S = joint.dims[0];
  const std::size_t Z1 = joint.dims[1];
  const std::size_t Z2 = joint.dims[2];
  const std::vector<double> p_sz2 = mi::marginal(joint, {0, 2});
  std::vector<Matrix> critics(S, Matrix(Z1, Z2));
  std::vector<std::size_t> c;
  for (auto& m : critics) {
    for (double& v : m.data()) v = -50.0;  // effectively exp(f) = 0
  }
  for (std::size_t flat = 0; flat < joint.cells(); ++flat) {
    if (joint.probs[flat] == 0.0) continue;
    joint.coords_of(flat, c);
    const double denom = p_sz2[c[0] * Z2 + c[2]];
    critics[c[0]](c[1], c[2]) = std::log(joint.probs[flat] / denom);
  }
  return critics;
}

// --- client-ID bound validation --------------------------------------------------------

struct UvBoundsReport {
  double i_z1_s = 0.0;          // true I(z1; s)
  double lower_bound = 0.0;     // E[log r1(s|z1)] + H(s)
  double i_z1_s_given_z2 = 0.0; // true I(z1; s | z2)
  double upper_bound = 0.0;     // -E[log r2(s|z2)]
  bool lower_holds = false;
  bool upper_holds = false;
};

// Validates the classifier bounds: any r1(s|z1) gives a lower bound on
// I(z1; s); any r2(s|z2) gives an upper bound on I(z1; s | z2). Expectations
// are exact sums under the joint.
inline UvBoundsReport validate_uv_bounds(const DiscreteJoint& joint, const Matrix& r1,
                                         const Matrix& r2, double tol = 1e-12) {
  joint.validate();
  if (joint.dims.size() != 3) throw std::invalid_argument("uv bounds: need (s, z1, z2) joint");
  const std::size_t S = joint.dims[0];
  if (r1.cols() != S || r2.cols() != S || r1.rows() != joint.dims[1] ||
      r2.rows() != joint.dims[2]) {
    throw std::invalid_argument("uv bounds: classifier shapes do not match joint");
  }
  UvBoundsReport rep;
  rep.i_z1_s = exact_mi(joint, {1}, {0});
  rep.i_z1_s_given_z2 = exact_mi(joint, {1}, {0}, {2});

  const std::vector<double> p_sz1 = mi::marginal(joint, {0, 1});
  const std::vector<double> p_sz2 = mi::marginal(joint, {0, 2});
  const double h_s = entropy(joint, {0});
  double e_log_r1 = 0.0, e_log_r2 = 0.0;
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t z1 = 0; z1 < joint.dims[1]; ++z1) {
      const double p = p_sz1[s * joint.dims[1] + z1];
      if (p > 0.0) e_log_r1 += p * std::log(r1(z1, s));
    }
    for (std::size_t z2 = 0; z2 < joint.dims[2]; ++z2) {
      const double p = p_sz2[s * joint.dims[2] + z2];
      if (p > 0.0) e_log_r2 += p * std::log(r2(z2, s));
    }
  }
  rep.lower_bound = e_log_r1 + h_s;
  rep.upper_bound = -e_log_r2;
  rep.lower_holds = rep.lower_bound <= rep.i_z1_s + tol;
  rep.upper_holds = rep.upper_bound >= rep.i_z1_s_given_z2 - tol;
  return rep;
}

// True posterior p(s | z1) as a (Z1 x S) table; rows with p(z1) = 0 are
// uniform (they never enter an expectation).
inline Matrix true_posterior_s_given_z1(const DiscreteJoint& joint) {
  const std::size_t S = joint.dims[0];
  const std::size_t Z1 = joint.dims[1];
  const std::vector<double> p_sz1 = mi::marginal(joint, {0, 1});
  const std::vector<double> p_z1 = mi::marginal(joint, {1});
  Matrix post(Z1, S);
  for (std::size_t z1 = 0; z1 < Z1; ++z1) {
    for (std::size_t s = 0; s < S; ++s) {
      post(z1, s) = p_z1[z1] > 0.0 ? p_sz1[s * Z1 + z1] / p_z1[z1] : 1.0 / S;
    }
  }
  return post;
}

// --- label-skew supervised bound validation ----------------------------------------------

struct SupervisedBoundReport {
  double lhs = 0.0;   // I(z1; y) + I(z2; y)
  double rhs = 0.0;   // E[log r1(s|z1) + log r2(s|z2)] + 2 H(s)
  bool holds = false;
};

// Checks, under the label-skew factorization, that the label information in
// the two views upper-bounds the classifier surrogate. Rejects joints that
// do not factorize as p(s) p(y|s) p(z1|y) p(z2|y).
inline SupervisedBoundReport validate_supervised_bound(const DiscreteJoint& joint,
                                                       const Matrix& r1, const Matrix& r2,
                                                       double tol = 1e-12) {
  joint.validate();
  if (joint.dims.size() != 4) {
    throw std::invalid_argument("supervised bound: need (s, y, z1, z2) joint");
  }
  const std::size_t S = joint.dims[0];
  const std::size_t Y = joint.dims[1];
  const std::size_t Z1 = joint.dims[2];
  const std::size_t Z2 = joint.dims[3];
  // Factorization precondition: p(s,y,z1,z2) = p(s,y) p(z1|y) p(z2|y).
  const std::vector<double> p_sy = mi::marginal(joint, {0, 1});
  const std::vector<double> p_y = mi::marginal(joint, {1});
  const std::vector<double> p_yz1 = mi::marginal(joint, {1, 2});
  const std::vector<double> p_yz2 = mi::marginal(joint, {1, 3});
  std::vector<std::size_t> c;
  for (std::size_t flat = 0; flat < joint.cells(); ++flat) {
    joint.coords_of(flat, c);
    if (p_y[c[1]] == 0.0) continue;
    const double expected = p_sy[c[0] * Y + c[1]] * (p_yz1[c[1] * Z1 + c[2]] / p_y[c[1]]) *
                            (p_yz2[c[1] * Z2 + c[3]] / p_y[c[1]]);
    if (std::abs(joint.probs[flat] - expected) > 1e-9) {
      throw std::invalid_argument("supervised bound: joint lacks label-skew factorization");
    }
  }

  SupervisedBoundReport rep;
  rep.lhs = exact_mi(joint, {2}, {1}) + exact_mi(joint, {3}, {1});
  const std::vector<double> p_sz1 = mi::marginal(joint, {0, 2});
  const std::vector<double> p_sz2 = mi::marginal(joint, {0, 3});
  double e_log = 0.0;
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t z1 = 0; z1 < Z1; ++z1) {
      const double p = p_sz1[s * Z1 + z1];
      if (p > 0.0) e_log += p * std::log(r1(z1, s));
    }
    for (std::size_t z2 = 0; z2 < Z2; ++z2) {
      const double p = p_sz2[s * Z2 + z2];
      if (p > 0.0) e_log += p * std::log(r2(z2, s));
    }
  }
  rep.rhs = e_log + 2.0 * entropy(joint, {0});
  rep.holds = rep.rhs <= rep.lhs + tol;
  return rep;
}

}  // namespace fcl
