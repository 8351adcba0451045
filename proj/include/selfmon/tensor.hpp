#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace selfmon::num {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles with an explicit shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor scalar(double value);
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& storage() { return values_; }
  const std::vector<double>& storage() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t row, std::size_t col) { return values_[row * shape_[1] + col]; }
  double at(std::size_t row, std::size_t col) const { return values_[row * shape_[1] + col]; }

  std::span<const double> row(std::size_t r) const;
  std::span<double> row(std::size_t r);

  bool all_finite() const;
  void fill(double value);
  Tensor& operator+=(const Tensor& other);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

}  // namespace selfmon::num
