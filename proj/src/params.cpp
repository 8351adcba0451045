#include "selfmon/params.hpp"

#include <cmath>

#include "selfmon/errors.hpp"

namespace selfmon::num {

std::size_t ParameterSet::add(std::string name, Tensor tensor, bool trainable) {
  if (contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
  params_.push_back({std::move(name), std::move(tensor), trainable});
  return params_.size() - 1;
}

std::size_t ParameterSet::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return i;
  throw ContractError("unknown parameter '" + std::string(name) + "'");
}

bool ParameterSet::contains(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return true;
  return false;
}

std::size_t ParameterSet::scalar_count(bool trainable_only) const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.trainable || !trainable_only) n += p.tensor.size();
  return n;
}

GradientSet zero_gradients(const ParameterSet& params) {
  GradientSet g;
  g.reserve(params.size());
  for (const auto& p : params) g.push_back(Tensor::zeros_like(p.tensor));
  return g;
}

void accumulate(GradientSet& into, const GradientSet& from) {
  if (into.size() != from.size()) throw DimensionError("gradient sets differ in length");
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += from[i];
}

void scale(GradientSet& grads, double factor) {
  for (auto& g : grads)
    for (auto& v : g.values()) v *= factor;
}

double global_norm(const GradientSet& grads) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g.values()) sq += v * v;
  return std::sqrt(sq);
}

double clip_global_norm(GradientSet& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) scale(grads, max_norm / norm);
  return norm;
}

bool all_finite(const GradientSet& grads) {
  for (const auto& g : grads)
    if (!g.all_finite()) return false;
  return true;
}

}  // namespace selfmon::num
