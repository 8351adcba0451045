#include "selfmon/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "selfmon/errors.hpp"

namespace selfmon::num {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), values_(element_count(shape_), 0.0) {
  for (auto d : shape_)
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  for (auto d : shape_)
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape_));
  if (element_count(shape_) != values_.size())
    throw DimensionError("shape " + shape_string(shape_) + " does not hold " +
                         std::to_string(values_.size()) + " values");
}

Tensor Tensor::vector(std::vector<double> values) {
  Shape s{values.size()};
  return Tensor(std::move(s), std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(shape_));
  return shape_[axis];
}

std::span<const double> Tensor::row(std::size_t r) const {
  const auto cols = shape_.at(1);
  return std::span<const double>(values_).subspan(r * cols, cols);
}

std::span<double> Tensor::row(std::size_t r) {
  const auto cols = shape_.at(1);
  return std::span<double>(values_).subspan(r * cols, cols);
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double value) { std::fill(values_.begin(), values_.end(), value); }

Tensor& Tensor::operator+=(const Tensor& other) {
  if (other.values_.size() != values_.size())
    throw DimensionError("cannot add " + shape_string(other.shape_) + " into " + shape_string(shape_));
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
  return *this;
}

}  // namespace selfmon::num
