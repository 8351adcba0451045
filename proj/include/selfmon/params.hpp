#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "selfmon/tensor.hpp"

namespace selfmon::num {

struct Parameter {
  std::string name;
  Tensor tensor;
  bool trainable = true;
  friend bool operator==(const Parameter&, const Parameter&) = default;
};

/// Ordered, name-unique collection of parameters. Indices are stable.
class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor tensor, bool trainable = true);

  std::size_t index_of(std::string_view name) const;
  bool contains(std::string_view name) const;

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  Parameter& operator[](std::string_view name) { return params_[index_of(name)]; }
  const Parameter& operator[](std::string_view name) const { return params_[index_of(name)]; }

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count(bool trainable_only = true) const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  std::vector<Parameter> params_;
};

/// One gradient tensor per parameter, index-aligned with a ParameterSet.
using GradientSet = std::vector<Tensor>;

GradientSet zero_gradients(const ParameterSet& params);
void accumulate(GradientSet& into, const GradientSet& from);
void scale(GradientSet& grads, double factor);
double global_norm(const GradientSet& grads);
/// Rescales so the global norm is at most max_norm. Returns the norm before clipping.
double clip_global_norm(GradientSet& grads, double max_norm);
bool all_finite(const GradientSet& grads);

}  // namespace selfmon::num
