#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sslab/error.hpp"

namespace sslab {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw Error(ErrorKind::ShapeMismatch,
                std::string(what) + " is " + std::to_string(m.rows()) + "x" +
                    std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
                    std::to_string(cols));
  }
}

/// c (+)= a * b
inline void gemm(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false) {
  assert(a.cols() == b.rows());
  if (!accumulate) c = Matrix(a.rows(), b.cols());
  assert(c.rows() == a.rows() && c.cols() == b.cols());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  for (std::size_t i = 0; i < n; ++i) {
    double* __restrict crow = pc + i * m;
    const double* arow = pa + i * k;
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
      const double a0 = arow[p], a1 = arow[p + 1], a2 = arow[p + 2], a3 = arow[p + 3];
      const double* __restrict b0 = pb + p * m;
      const double* __restrict b1 = b0 + m;
      const double* __restrict b2 = b1 + m;
      const double* __restrict b3 = b2 + m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
    }
    for (; p < k; ++p) {
      const double av = arow[p];
      const double* __restrict brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

/// c (+)= a^T * b
inline void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false) {
  assert(a.rows() == b.rows());
  if (!accumulate) c = Matrix(a.cols(), b.cols());
  assert(c.rows() == a.cols() && c.cols() == b.cols());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  std::size_t r = 0;
  for (; r + 4 <= n; r += 4) {
    const double* __restrict b0 = pb + r * m;
    const double* __restrict b1 = b0 + m;
    const double* __restrict b2 = b1 + m;
    const double* __restrict b3 = b2 + m;
    for (std::size_t i = 0; i < k; ++i) {
      const double a0 = pa[r * k + i], a1 = pa[(r + 1) * k + i], a2 = pa[(r + 2) * k + i], a3 = pa[(r + 3) * k + i];
      double* __restrict crow = pc + i * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
    }
  }
  for (; r < n; ++r) {
    const double* __restrict brow = pb + r * m;
    for (std::size_t i = 0; i < k; ++i) {
      const double av = pa[r * k + i];
      double* __restrict crow = pc + i * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
  return t;
}

/// c (+)= a * b^T, via an explicit transpose so the inner loop vectorizes
inline void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false) {
  assert(a.cols() == b.cols());
  gemm(a, transpose(b), c, accumulate);
}

inline void add_inplace(Matrix& dst, const Matrix& src) {
  assert(dst.same_shape(src));
  auto d = dst.values();
  auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

inline bool all_finite(const Matrix& m) {
  return std::all_of(m.values().begin(), m.values().end(),
                     [](double v) { return std::isfinite(v); });
}

}  // namespace sslab
