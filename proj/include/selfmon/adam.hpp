#pragma once

#include <cstdint>

#include "selfmon/params.hpp"

namespace selfmon::num {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct AdamState {
  GradientSet m;
  GradientSet v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const ParameterSet& params);
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// Bias-corrected Adam update of every trainable parameter, in place.
/// Throws ConfigError when lr <= 0 or the betas leave [0, 1).
void adam_step(ParameterSet& params, const GradientSet& grads, AdamState& state, const AdamConfig& cfg);

}  // namespace selfmon::num
