#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "partrain/errors.hpp"

namespace partrain {

inline std::size_t shape_size(std::span<const std::size_t> shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(std::span<const std::size_t> shape);

/// Dense row-major tensor. The product of the shape always equals the number
/// of stored values.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, T fill = T{0})
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Tensor(std::vector<std::size_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
      throw ShapeError("tensor data has " + std::to_string(data_.size()) +
                       " values but shape " + shape_string(shape_) +
                       " needs " + std::to_string(shape_size(shape_)));
    }
  }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  void reshape(std::vector<std::size_t> shape) {
    if (shape_size(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " +
                       shape_string(shape));
    }
    shape_ = std::move(shape);
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

/// Throws NumericError naming `where` when the tensor holds NaN or infinity.
template <typename T>
void require_finite(const Tensor<T>& t, std::string_view where) {
  if (!t.all_finite()) {
    throw NumericError("non-finite value in " + std::string(where));
  }
}

template <typename T>
void require_shape(const Tensor<T>& t, std::span<const std::size_t> shape,
                   std::string_view what) {
  if (!std::equal(t.shape().begin(), t.shape().end(), shape.begin(),
                  shape.end())) {
    throw ShapeError(std::string(what) + ": expected shape " +
                     shape_string(shape) + ", got " + shape_string(t.shape()));
  }
}

}  // namespace partrain
