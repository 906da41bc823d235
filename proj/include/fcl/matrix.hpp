// Dense row-major double matrix, the single numeric container used across
// the library. Deliberately small: only the operations the training and
// oracle code paths need, no broadcasting, no views into foreign storage.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace fcl {

class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw std::invalid_argument("Matrix: data length " +
                                  std::to_string(data_.size()) +
                                  " does not match " + std::to_string(rows_) +
                                  "x" + std::to_string(cols_));
    }
  }

  static Matrix zeros(std::size_t rows, std::size_t cols) {
    return Matrix(rows, cols);
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    Matrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw std::invalid_argument("Matrix: ragged rows");
      std::size_t j = 0;
      for (double v : row) m(i, j++) = v;
      ++i;
    }
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* row_ptr(std::size_t i) { return data_.data() + i * cols_; }
  const double* row_ptr(std::size_t i) const { return data_.data() + i * cols_; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  Matrix row(std::size_t i) const {
    Matrix out(1, cols_);
    std::copy(row_ptr(i), row_ptr(i) + cols_, out.row_ptr(0));
    return out;
  }

  // Gathers the given rows into a new matrix, in the order given.
  Matrix gather_rows(const std::vector<std::size_t>& idx) const {
    Matrix out(idx.size(), cols_);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (idx[k] >= rows_) throw std::invalid_argument("gather_rows: index out of range");
      std::copy(row_ptr(idx[k]), row_ptr(idx[k]) + cols_, out.row_ptr(k));
    }
    return out;
  }

  // Adds row k of `src` into row idx[k] of *this.
  void scatter_add_rows(const std::vector<std::size_t>& idx, const Matrix& src) {
    if (src.rows() != idx.size() || src.cols() != cols_) {
      throw std::invalid_argument("scatter_add_rows: shape mismatch");
    }
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const double* s = src.row_ptr(k);
      double* d = row_ptr(idx[k]);
      for (std::size_t j = 0; j < cols_; ++j) d[j] += s[j];
    }
  }

  Matrix& operator+=(const Matrix& o) {
    check_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  Matrix& operator-=(const Matrix& o) {
    check_same_shape(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }

  Matrix& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
  friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
  friend Matrix operator*(Matrix a, double s) { return a *= s; }
  friend Matrix operator*(double s, Matrix a) { return a *= s; }

  bool operator==(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

 private:
  void check_same_shape(const Matrix& o, const char* op) const {
    if (rows_ != o.rows_ || cols_ != o.cols_) {
      throw std::invalid_argument(std::string("Matrix: shape mismatch in ") + op);
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions disagree (" +
                                std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()) + ")");
  }
  Matrix out(a.rows(), b.cols());
  const std::size_t n = a.rows(), m = a.cols(), p = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a.row_ptr(i);
    double* orow = out.row_ptr(i);
    for (std::size_t k = 0; k < m; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.row_ptr(k);
      for (std::size_t j = 0; j < p; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

inline Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  return out;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("hadamard: shape mismatch");
  }
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

inline double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline double row_norm(const Matrix& m, std::size_t i) {
  return std::sqrt(dot(m.row_ptr(i), m.row_ptr(i), m.cols()));
}

namespace detail {

// Divisor that takes a row to unit norm. Rows already unit to representable
// precision divide by exactly 1.0: renormalizing cannot improve them, and
// skipping the division makes normalization exactly idempotent. Norms at or
// below eps divide by eps, which keeps exact zero rows at zero.
inline double unit_divisor(double raw_norm, std::size_t cols, double eps) {
  const double snap = 8.0 * std::numeric_limits<double>::epsilon() *
                      static_cast<double>(std::max<std::size_t>(cols, 4));
  return std::abs(raw_norm - 1.0) <= snap ? 1.0 : std::max(raw_norm, eps);
}

}  // namespace detail

// Scales row i to unit L2 norm in place.
inline void normalize_row_in_place(Matrix& m, std::size_t i, double eps = 1e-12) {
  if (!(eps > 0.0)) throw std::invalid_argument("normalize_row_in_place: eps must be > 0");
  const double n = detail::unit_divisor(row_norm(m, i), m.cols(), eps);
  double* p = m.row_ptr(i);
  for (std::size_t j = 0; j < m.cols(); ++j) p[j] /= n;
}

// Divides each row by max(||row||_2, eps); see unit_divisor for the edge
// cases.
inline Matrix row_l2_normalize(const Matrix& m, double eps = 1e-12) {
  if (!(eps > 0.0)) throw std::invalid_argument("row_l2_normalize: eps must be > 0");
  Matrix out = m;
  for (std::size_t i = 0; i < out.rows(); ++i) normalize_row_in_place(out, i, eps);
  return out;
}

inline bool all_finite(const Matrix& m) {
  for (double v : m.data())
    if (!std::isfinite(v)) return false;
  return true;
}

inline double frobenius_norm(const Matrix& m) {
  return std::sqrt(dot(m.data().data(), m.data().data(), m.size()));
}

}  // namespace fcl
