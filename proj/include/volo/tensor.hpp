// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace volo {

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

/// Raised when operand extents are incompatible. The message carries both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;

  ShapeError(const std::string& what, const Shape& a, const Shape& b)
      : std::invalid_argument(what + ": " + to_string(a) + " vs " +
                              to_string(b)) {}
};

/// Raised when an API precondition that is not about shapes is violated.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Dense row-major array. Always owns a contiguous buffer; reshape and
/// permute return new tensors.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(numel(shape_), fill) {}

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (numel(shape_) != data_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T{0}); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T{1}); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size()) {
      throw ShapeError("index rank " + std::to_string(index.size()) +
                       " does not match tensor rank " +
                       std::to_string(shape_.size()));
    }
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  T& at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
  const T& at(std::initializer_list<std::size_t> index) const {
    return data_[offset(index)];
  }

  Tensor reshaped(Shape shape) const {
    if (numel(shape) != data_.size()) {
      throw ShapeError("reshape changes element count", shape_, shape);
    }
    return Tensor(std::move(shape), data_);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

/// Accumulated multiply-add count. Only matrix products report into it.
class MAddCounter {
 public:
  void add(std::uint64_t n) noexcept { total_ += n; }
  std::uint64_t total() const noexcept { return total_; }
  void reset() noexcept { total_ = 0; }

 private:
  std::uint64_t total_ = 0;
};

namespace kernel {

// C[m x n] (+)= A[m x k] * B[k x n]
template <class T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* __restrict a,
             const T* __restrict b, T* __restrict c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T{0});
  for (std::size_t i = 0; i < m; ++i) {
    T* __restrict crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* __restrict brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] (+)= A[m x k] * B[n x k]^T, via a transposed copy of B so the
// inner loop runs over contiguous rows
template <class T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a,
             const T* b, T* c, bool accumulate) {
  std::vector<T> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(m, k, n, a, bt.data(), c, accumulate);
}

// C[m x n] (+)= A[k x m]^T * B[k x n]
template <class T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* __restrict a,
             const T* __restrict b, T* __restrict c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T{0});
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      T* __restrict crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

inline std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) {
    strides[i - 1] = strides[i] * shape[i];
  }
  return strides;
}

inline void check_permutation(const Shape& shape,
                              std::span<const std::size_t> perm) {
  if (perm.size() != shape.size()) {
    throw ShapeError("permutation rank " + std::to_string(perm.size()) +
                     " does not match tensor " + to_string(shape));
  }
  std::vector<bool> seen(perm.size(), false);
  for (std::size_t p : perm) {
    if (p >= perm.size() || seen[p]) {
      throw ShapeError("invalid permutation for tensor " + to_string(shape));
    }
    seen[p] = true;
  }
}

}  // namespace kernel

/// Materialized axis permutation: out.shape[i] = in.shape[perm[i]].
template <class T>
Tensor<T> permute(const Tensor<T>& x, std::span<const std::size_t> perm) {
  kernel::check_permutation(x.shape(), perm);
  const std::size_t r = x.rank();
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.shape()[perm[i]];
  Tensor<T> out(out_shape);
  if (x.size() == 0) return out;
  const auto in_strides = kernel::strides_of(x.shape());
  std::vector<std::size_t> src_stride(r);
  for (std::size_t i = 0; i < r; ++i) src_stride[i] = in_strides[perm[i]];

  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  const T* in = x.ptr();
  T* o = out.ptr();
  const std::size_t inner = r ? out_shape[r - 1] : 1;
  const std::size_t inner_stride = r ? src_stride[r - 1] : 1;
  for (std::size_t dst = 0; dst < out.size(); dst += inner) {
    for (std::size_t j = 0; j < inner; ++j) o[dst + j] = in[src + j * inner_stride];
    // advance multi-index over all but the innermost axis
    for (std::size_t ax = r - 1; ax-- > 0;) {
      ++idx[ax];
      src += src_stride[ax];
      if (idx[ax] < out_shape[ax]) break;
      src -= src_stride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return out;
}

template <class T>
Tensor<T> permute(const Tensor<T>& x, std::initializer_list<std::size_t> perm) {
  return permute(x, std::span<const std::size_t>(perm.begin(), perm.size()));
}

inline std::vector<std::size_t> inverse_permutation(
    std::span<const std::size_t> perm) {
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
  return inv;
}

/// Plain 2-D product, optionally reported to a counter.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b,
                 MAddCounter* counter = nullptr) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw ShapeError("matmul dimension mismatch", a.shape(), b.shape());
  }
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor<T> c({m, n});
  kernel::gemm_nn(m, k, n, a.ptr(), b.ptr(), c.ptr(), false);
  if (counter) counter->add(static_cast<std::uint64_t>(m) * k * n);
  return c;
}

template <class T>
T dot(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.size() != b.size()) throw ShapeError("dot size mismatch", a.shape(), b.shape());
  T acc{0};
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace volo
