#include "kgdial/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "kgdial/error.hpp"

namespace kgdial {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, Real fill)
    : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<Real> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (values_.size() != shape_size(shape_)) {
    throw DimensionError("tensor", "shape " + shape_string(shape_) + " holds " +
                                       std::to_string(shape_size(shape_)) +
                                       " values, got " +
                                       std::to_string(values_.size()));
  }
}

Tensor Tensor::scalar(Real value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::vector(std::vector<Real> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<Real> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

Real Tensor::item() const {
  if (values_.size() != 1) {
    throw DimensionError("item", "expected one element, shape " + shape_string(shape_));
  }
  return values_[0];
}

void Tensor::fill(Real value) { std::fill(values_.begin(), values_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](Real v) { return std::isfinite(v); });
}

}  // namespace kgdial
