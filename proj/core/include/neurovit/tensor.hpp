#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "neurovit/error.hpp"

namespace neurovit {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Row-major array (last dimension fastest) with an optional gradient
/// buffer of the same length. Production code uses `Tensor` (float); the
/// double instantiation exists for gradient checking.
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    check_shape();
    data_.assign(shape_numel(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != shape_numel(shape_)) {
      throw Error(Errc::ShapeMismatch, "tensor data length " + std::to_string(data_.size()) +
                                           " does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int i) const noexcept { return shape_[static_cast<std::size_t>(i)]; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& values() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Element (i, j) of a rank-2 tensor.
  T& at(int i, int j) noexcept { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
  const T& at(int i, int j) const noexcept { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }

  bool has_grad() const noexcept { return !grad_.empty(); }
  std::span<T> grad() noexcept { return grad_; }
  std::span<const T> grad() const noexcept { return grad_; }
  /// Allocates (or clears) the gradient buffer to zeros.
  void zero_grad() { grad_.assign(data_.size(), T(0)); }
  void drop_grad() noexcept {
    grad_.clear();
    grad_.shrink_to_fit();
  }

  /// Same shape, reinterpreted as `new_shape` (element count must match).
  BasicTensor reshaped(Shape new_shape) const {
    if (shape_numel(new_shape) != data_.size()) {
      throw Error(Errc::ShapeMismatch, "cannot reshape " + shape_string(shape_) + " to " + shape_string(new_shape));
    }
    return BasicTensor(std::move(new_shape), data_);
  }

  template <class U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  /// Shape and values equal; gradients are not compared.
  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_shape() const {
    for (int d : shape_) {
      if (d <= 0) throw Error(Errc::ShapeMismatch, "tensor dimensions must be positive: " + shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
  std::vector<T> grad_;
};

using Tensor = BasicTensor<float>;

/// Throws NonFinite if any element is NaN or infinite.
template <class T>
void check_finite(const BasicTensor<T>& t, const char* what) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) {
      throw Error(Errc::NonFinite, std::string(what) + ": non-finite value at flat index " + std::to_string(i));
    }
  }
}

/// Finiteness guard compiled in only for debug builds.
template <class T>
inline void debug_check_finite([[maybe_unused]] const BasicTensor<T>& t, [[maybe_unused]] const char* what) {
#ifndef NDEBUG
  check_finite(t, what);
#endif
}

}  // namespace neurovit
