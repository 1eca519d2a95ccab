// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "dst/error.hpp"

namespace dst {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

/// Dense row-major array. Rank 1 and 2 are the only ranks the library uses;
/// a scalar is shape {1}.
template <class T>
struct BasicTensor {
  Shape shape;
  std::vector<T> data;

  BasicTensor() = default;

  explicit BasicTensor(Shape s, T fill = T(0))
      : shape(std::move(s)), data(numel(shape), fill) {
    validate_shape();
  }

  BasicTensor(Shape s, std::vector<T> values)
      : shape(std::move(s)), data(std::move(values)) {
    validate_shape();
    if (data.size() != numel(shape)) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_string(shape));
    }
  }

  static BasicTensor scalar(T v) { return BasicTensor({1}, std::vector<T>{v}); }

  static BasicTensor vector(std::vector<T> values) {
    const std::size_t n = values.size();
    return BasicTensor({n}, std::move(values));
  }

  static BasicTensor matrix(std::size_t rows, std::size_t cols,
                            std::vector<T> values) {
    return BasicTensor({rows, cols}, std::move(values));
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  std::size_t cols() const { return shape.empty() ? 0 : shape.back(); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }
  T& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data[r * cols() + c];
  }

  bool all_finite() const {
    for (T v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  template <class U>
  BasicTensor<U> cast() const {
    return BasicTensor<U>(shape, std::vector<U>(data.begin(), data.end()));
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  void validate_shape() const {
    if (shape.empty() || shape.size() > 2) {
      throw DimensionError("tensor rank must be 1 or 2, got shape " +
                           shape_string(shape));
    }
    for (std::size_t d : shape) {
      if (d == 0) throw DimensionError("zero-sized dimension in " + shape_string(shape));
    }
  }
};

using Tensor = BasicTensor<float>;

/// Trainable tensor with its accumulated gradient.
template <class T>
struct Parameter {
  std::string name;
  BasicTensor<T> value;
  std::vector<T> grad;

  Parameter(std::string n, BasicTensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.size(), T(0)) {}

  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

}  // namespace dst
