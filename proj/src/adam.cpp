#include "selfmon/adam.hpp"

#include <cmath>

#include "selfmon/errors.hpp"

namespace selfmon::num {

AdamState AdamState::zeros_like(const ParameterSet& params) {
  return {zero_gradients(params), zero_gradients(params), 0};
}

void adam_step(ParameterSet& params, const GradientSet& grads, AdamState& state, const AdamConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw ConfigError("Adam learning rate must be positive, got " + std::to_string(cfg.lr));
  if (cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 || cfg.beta2 >= 1.0)
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw DimensionError("Adam: parameter, gradient and moment sets differ in length");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!params[p].trainable) continue;
    auto theta = params[p].tensor.values();
    const auto g = grads[p].values();
    auto m = state.m[p].values();
    auto v = state.v[p].values();
    if (g.size() != theta.size()) throw DimensionError("Adam: gradient shape mismatch for " + params[p].name);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      theta[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace selfmon::num
