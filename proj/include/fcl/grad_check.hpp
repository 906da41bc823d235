// Central-difference gradient oracle. Every analytic backward pass in the
// library is validated against this; it stays independent of any of them.
#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

namespace fcl {

using ScalarFn = std::function<double(const std::vector<double>&)>;

inline std::vector<double> finite_diff_grad(const ScalarFn& f,
                                            std::vector<double> x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: h must be > 0");
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    x[i] = xi + h;
    const double fp = f(x);
    x[i] = xi - h;
    const double fm = f(x);
    x[i] = xi;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::runtime_error("finite_diff_grad: non-finite function value");
    }
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// ||a - b||_2 / max(||a||_2, ||b||_2); 0 when both vanish.
inline double relative_error(const std::vector<double>& a,
                             const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("relative_error: length mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  if (denom == 0.0) return 0.0;
  return std::sqrt(diff) / denom;
}

}  // namespace fcl
