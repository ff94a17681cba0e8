#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "graphdqn/error.hpp"

namespace graphdqn {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::initializer_list<std::initializer_list<double>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& row : init) {
      if (row.size() != cols_) throw ShapeError("ragged matrix initializer");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> flat() noexcept { return data_; }
  std::span<const double> flat() const noexcept { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Matrix transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError("shape mismatch: " + what);
}

/// a (m×p) · b (p×q). Skips zero entries of `a`, which is the common case for
/// normalized adjacencies and one-hot states.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  require_shape(a.cols() == b.rows(), "matmul inner dimension");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t p = 0; p < a.cols(); ++p) {
      const double v = a(i, p);
      if (v == 0.0) continue;
      auto src = b.row(p);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += v * src[j];
    }
  }
  return out;
}

/// x^T · m for a row vector x of length m.rows().
inline Vector vecmat(std::span<const double> x, const Matrix& m) {
  require_shape(x.size() == m.rows(), "vecmat length");
  Vector out(m.cols(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    if (v == 0.0) continue;
    auto src = m.row(i);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += v * src[j];
  }
  return out;
}

/// m · x for x of length m.cols().
inline Vector matvec(const Matrix& m, std::span<const double> x) {
  require_shape(x.size() == m.cols(), "matvec length");
  Vector out(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) acc += r[j] * x[j];
    out[i] = acc;
  }
  return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  require_shape(a.size() == b.size(), "dot length");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double relu(double x) noexcept { return x > 0.0 ? x : 0.0; }

inline bool all_finite(std::span<const double> xs) {
  for (double x : xs)
    if (!std::isfinite(x)) return false;
  return true;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.flat()[i] - b.flat()[i]));
  return m;
}

}  // namespace graphdqn
