#pragma once

// Dense row-major kernels with a fixed summation order.
//
// Every reduction walks its inner index from left to right and accumulates
// into a single scalar, so results are reproducible bit-for-bit on a given
// platform. Build with -ffp-contract=off to keep the compiler from fusing
// multiply-adds (the top-level CMakeLists does this).

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "opfuse/error.hpp"

namespace opfuse {

namespace detail {

template <std::floating_point T>
void require_finite(std::span<const T> values, const char* who) {
  for (const T v : values) {
    if (!std::isfinite(v)) throw InvalidInput(std::string(who) + ": non-finite element");
  }
}

}  // namespace detail

template <std::floating_point T>
class BasicRowVector {
 public:
  using value_type = T;

  explicit BasicRowVector(std::vector<T> data) : data_(std::move(data)) {
    detail::require(!data_.empty(), "RowVector: length must be positive");
    detail::require_finite<T>(data_, "RowVector");
  }

  BasicRowVector(std::initializer_list<T> values) : BasicRowVector(std::vector<T>(values)) {}

  static BasicRowVector filled(std::size_t n, T value) {
    return BasicRowVector(std::vector<T>(n, value));
  }

  static BasicRowVector zeros(std::size_t n) { return filled(n, T{0}); }

  std::size_t size() const noexcept { return data_.size(); }
  T operator[](std::size_t i) const { return data_[i]; }
  std::span<const T> values() const noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  friend bool operator==(const BasicRowVector&, const BasicRowVector&) = default;

 private:
  std::vector<T> data_;
};

template <std::floating_point T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    detail::require(rows_ > 0 && cols_ > 0, "Matrix: dimensions must be positive");
    detail::require(data_.size() == rows_ * cols_, "Matrix: rows*cols must equal data length");
    detail::require_finite<T>(data_, "Matrix");
  }

  static BasicMatrix filled(std::size_t rows, std::size_t cols, T value) {
    return BasicMatrix(rows, cols, std::vector<T>(rows * cols, value));
  }

  static BasicMatrix zeros(std::size_t rows, std::size_t cols) { return filled(rows, cols, T{0}); }

  static BasicMatrix identity(std::size_t n) {
    std::vector<T> data(n * n, T{0});
    for (std::size_t i = 0; i < n; ++i) data[i * n + i] = T{1};
    return BasicMatrix(n, n, std::move(data));
  }

  static BasicMatrix from_rows(std::span<const BasicRowVector<T>> rows) {
    detail::require(!rows.empty(), "Matrix::from_rows: no rows");
    const std::size_t cols = rows.front().size();
    std::vector<T> data;
    data.reserve(rows.size() * cols);
    for (const auto& r : rows) {
      detail::require(r.size() == cols, "Matrix::from_rows: ragged rows");
      data.insert(data.end(), r.values().begin(), r.values().end());
    }
    return BasicMatrix(rows.size(), cols, std::move(data));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  T operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<const T> values() const noexcept { return data_; }

  std::span<const T> row_span(std::size_t r) const {
    return std::span<const T>(data_).subspan(r * cols_, cols_);
  }

  BasicRowVector<T> row(std::size_t r) const {
    detail::require(r < rows_, "Matrix::row: index out of range");
    const auto s = row_span(r);
    return BasicRowVector<T>(std::vector<T>(s.begin(), s.end()));
  }

  // Columns [first, first + count) as a rows x count matrix.
  BasicMatrix column_block(std::size_t first, std::size_t count) const {
    detail::require(count > 0 && first + count <= cols_, "Matrix::column_block: out of range");
    std::vector<T> data;
    data.reserve(rows_ * count);
    for (std::size_t r = 0; r < rows_; ++r) {
      const auto s = row_span(r).subspan(first, count);
      data.insert(data.end(), s.begin(), s.end());
    }
    return BasicMatrix(rows_, count, std::move(data));
  }

  BasicMatrix transpose() const {
    std::vector<T> data(data_.size());
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) data[c * rows_ + r] = data_[r * cols_ + c];
    return BasicMatrix(cols_, rows_, std::move(data));
  }

  friend bool operator==(const BasicMatrix&, const BasicMatrix&) = default;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<T> data_;
};

using RowVector = BasicRowVector<double>;
using Matrix = BasicMatrix<double>;

// C = A * B. Each C(i, j) accumulates A(i, k) * B(k, j) for k = 0, 1, ...
// in that order, starting from zero.
template <std::floating_point T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  detail::require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  const std::size_t n = a.rows(), k_dim = a.cols(), m = b.cols();
  std::vector<T> out(n * m, T{0});
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < n; ++i) {
    T* out_row = out.data() + i * m;
    for (std::size_t k = 0; k < k_dim; ++k) {
      const T aik = av[i * k_dim + k];
      const T* b_row = bv.data() + k * m;
      for (std::size_t j = 0; j < m; ++j) out_row[j] += aik * b_row[j];
    }
  }
  return BasicMatrix<T>(n, m, std::move(out));
}

// Row vector times matrix, x * F. Same accumulation order as matmul with a
// single-row left operand.
template <std::floating_point T>
BasicRowVector<T> matmul(const BasicRowVector<T>& x, const BasicMatrix<T>& f) {
  detail::require(x.size() == f.rows(), "matmul: vector length differs from matrix rows");
  const std::size_t m = f.cols();
  std::vector<T> out(m, T{0});
  const auto fv = f.values();
  for (std::size_t k = 0; k < x.size(); ++k) {
    const T xk = x[k];
    const T* f_row = fv.data() + k * m;
    for (std::size_t j = 0; j < m; ++j) out[j] += xk * f_row[j];
  }
  return BasicRowVector<T>(std::move(out));
}

template <std::floating_point T>
BasicRowVector<T> hadamard(const BasicRowVector<T>& a, const BasicRowVector<T>& b) {
  detail::require(a.size() == b.size(), "hadamard: length mismatch");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return BasicRowVector<T>(std::move(out));
}

template <std::floating_point T>
BasicMatrix<T> diag(const BasicRowVector<T>& v) {
  const std::size_t n = v.size();
  std::vector<T> data(n * n, T{0});
  for (std::size_t i = 0; i < n; ++i) data[i * n + i] = v[i];
  return BasicMatrix<T>(n, n, std::move(data));
}

// s * v + b
template <std::floating_point T>
BasicRowVector<T> scale_add(const BasicRowVector<T>& v, T s, const BasicRowVector<T>& b) {
  detail::require(std::isfinite(s), "scale_add: non-finite scale");
  detail::require(v.size() == b.size(), "scale_add: length mismatch");
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = s * v[i] + b[i];
  return BasicRowVector<T>(std::move(out));
}

// v / s, elementwise. Used where the deferred normalizer is a divisor.
template <std::floating_point T>
BasicRowVector<T> divide(const BasicRowVector<T>& v, T s) {
  detail::require(std::isfinite(s) && s != T{0}, "divide: divisor must be finite and non-zero");
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / s;
  return BasicRowVector<T>(std::move(out));
}

template <std::floating_point T>
BasicRowVector<T> add(const BasicRowVector<T>& a, const BasicRowVector<T>& b) {
  detail::require(a.size() == b.size(), "add: length mismatch");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return BasicRowVector<T>(std::move(out));
}

template <std::floating_point T>
BasicMatrix<T> add(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  std::vector<T> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return BasicMatrix<T>(a.rows(), a.cols(), std::move(out));
}

// Normwise relative error ||actual - expected||_inf / ||expected||_inf.
// Falls back to the absolute error when the reference is identically zero.
template <std::floating_point T>
T relative_error(std::span<const T> actual, std::span<const T> expected) {
  detail::require(actual.size() == expected.size(), "relative_error: length mismatch");
  T diff = 0, ref = 0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    diff = std::max(diff, std::abs(actual[i] - expected[i]));
    ref = std::max(ref, std::abs(expected[i]));
  }
  return ref > T{0} ? diff / ref : diff;
}

template <std::floating_point T>
T relative_error(const BasicRowVector<T>& actual, const BasicRowVector<T>& expected) {
  return relative_error<T>(actual.values(), expected.values());
}

// Worst row-wise relative error.
template <std::floating_point T>
T relative_error(const BasicMatrix<T>& actual, const BasicMatrix<T>& expected) {
  detail::require(actual.rows() == expected.rows() && actual.cols() == expected.cols(),
                  "relative_error: shape mismatch");
  T worst = 0;
  for (std::size_t r = 0; r < actual.rows(); ++r)
    worst = std::max(worst, relative_error<T>(actual.row_span(r), expected.row_span(r)));
  return worst;
}

}  // namespace opfuse
