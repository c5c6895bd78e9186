#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace vistab {

/// Raised when operand shapes do not fit an operation's contract.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a computation produces or receives non-finite values.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major tensor. Rank 2 is the workhorse; rank 1 vectors and rank 4
/// image batches (N, C, H, W) appear in the convolutional encoder.
template <std::floating_point T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size())
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }

  static Tensor identity(std::size_t n) {
    Tensor out({n, n});
    for (std::size_t i = 0; i < n; ++i) out(i, i) = T(1);
    return out;
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t m = rows.size();
    const std::size_t n = m ? rows.begin()->size() : 0;
    std::vector<T> data;
    data.reserve(m * n);
    for (const auto& row : rows) {
      if (row.size() != n) throw DimensionError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({m, n}, std::move(data));
  }

  static Tensor vector(std::initializer_list<T> values) {
    return Tensor({values.size()}, std::vector<T>(values));
  }

  static Tensor row(std::span<const T> values) {
    return Tensor({1, values.size()}, std::vector<T>(values.begin(), values.end()));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const {
    require_rank(2);
    return shape_[0];
  }
  std::size_t cols() const {
    require_rank(2);
    return shape_[1];
  }

  T& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  T& operator[](std::size_t k) { return data_[k]; }
  const T& operator[](std::size_t k) const { return data_[k]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  std::span<T> row_span(std::size_t i) { return {data_.data() + i * cols(), cols()}; }
  std::span<const T> row_span(std::size_t i) const { return {data_.data() + i * cols(), cols()}; }

  T item() const {
    if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size())
      throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    return Tensor(std::move(shape), data_);
  }

  template <std::floating_point U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(other, "+=");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += other.data_[k];
    return *this;
  }

  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

  void require_rank(std::size_t r) const {
    if (shape_.size() != r)
      throw DimensionError("expected rank " + std::to_string(r) + ", got shape " + shape_string(shape_));
  }

  void require_same_shape(const Tensor& other, const char* op) const {
    if (shape_ != other.shape_)
      throw DimensionError(std::string(op) + ": shape " + shape_string(shape_) + " vs " +
                           shape_string(other.shape_));
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

// ---------------------------------------------------------------------------
// Plain (untaped) kernels. The autodiff ops reuse these for their forward pass.
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
Eigen::Map<const RowMajor<T>> as_matrix(const Tensor<T>& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

template <class T>
Eigen::Map<RowMajor<T>> as_matrix(Tensor<T>& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

}  // namespace detail

/// Matrix product of an m x k and a k x n tensor.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  a.require_rank(2);
  b.require_rank(2);
  if (a.cols() != b.rows())
    throw DimensionError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  Tensor<T> out({a.rows(), b.cols()});
  if (a.cols() == 0) return out;
  detail::as_matrix(out).noalias() = detail::as_matrix(a) * detail::as_matrix(b);
  return out;
}

/// a^T b without materializing the transpose.
template <class T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rows() != b.rows())
    throw DimensionError("matmul_tn: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  Tensor<T> out({a.cols(), b.cols()});
  detail::as_matrix(out).noalias() = detail::as_matrix(a).transpose() * detail::as_matrix(b);
  return out;
}

/// a b^T without materializing the transpose.
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.cols())
    throw DimensionError("matmul_nt: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  Tensor<T> out({a.rows(), b.rows()});
  detail::as_matrix(out).noalias() = detail::as_matrix(a) * detail::as_matrix(b).transpose();
  return out;
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  Tensor<T> out({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

template <class T, class F>
Tensor<T> map(const Tensor<T>& x, F&& f) {
  Tensor<T> out(x.shape());
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = f(x[k]);
  return out;
}

template <class T, class F>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, F&& f, const char* op = "zip") {
  a.require_same_shape(b, op);
  Tensor<T> out(a.shape());
  for (std::size_t k = 0; k < a.size(); ++k) out[k] = f(a[k], b[k]);
  return out;
}

template <class T>
T elu(T x) {
  return x >= T(0) ? x : std::expm1(x);
}

template <class T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
T relu(T x) {
  return x > T(0) ? x : T(0);
}

template <class T>
Tensor<T> elu(const Tensor<T>& x) {
  return map(x, [](T v) { return elu(v); });
}
template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return map(x, [](T v) { return sigmoid(v); });
}
template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
  return map(x, [](T v) { return std::tanh(v); });
}
template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return map(x, [](T v) { return relu(v); });
}

/// Row-wise softmax with max subtraction. Entries whose mask is false are
/// excluded from the row (they come out as exactly zero). An empty mask means
/// no masking.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x, std::span<const bool> mask = {}) {
  x.require_rank(2);
  if (!mask.empty() && mask.size() != x.size())
    throw DimensionError("softmax_rows: mask size mismatch");
  Tensor<T> out(x.shape());
  const std::size_t m = x.rows(), n = x.cols();
  for (std::size_t i = 0; i < m; ++i) {
    auto keep = [&](std::size_t j) { return mask.empty() || mask[i * n + j]; };
    T hi = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (keep(j)) hi = std::max(hi, x(i, j));
    if (!std::isfinite(hi)) throw NumericalError("softmax_rows: row " + std::to_string(i) + " has no finite entry");
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const T e = keep(j) ? std::exp(x(i, j) - hi) : T(0);
      out(i, j) = e;
      total += e;
    }
    for (std::size_t j = 0; j < n; ++j) out(i, j) /= total;
  }
  return out;
}

inline constexpr double kLayerNormEpsilon = 1e-5;

/// Normalizes each row over the last axis, then applies gain and bias
/// (row vectors of length cols).
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias) {
  x.require_rank(2);
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.size() != n || bias.size() != n) throw DimensionError("layer_norm: gain/bias length");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < m; ++i) {
    T mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += x(i, j);
    mean /= T(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= T(n);
    const T inv = T(1) / std::sqrt(var + T(kLayerNormEpsilon));
    for (std::size_t j = 0; j < n; ++j) out(i, j) = (x(i, j) - mean) * inv * gain[j] + bias[j];
  }
  return out;
}

}  // namespace vistab
