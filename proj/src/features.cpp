#include "selfmon/features.hpp"

#include <cmath>
#include <string>

#include "selfmon/errors.hpp"
#include "selfmon/rng.hpp"

namespace selfmon::worldgen {

num::Tensor direction_feature(int landmark, double heading, double elevation, const FeatureSpec& spec) {
  if (spec.appearance_dim < 1 || spec.orientation_tiles < 0) throw ConfigError("invalid feature layout");
  if (landmark < 0 || landmark >= spec.appearance_dim)
    throw ContractError("landmark " + std::to_string(landmark) + " does not fit an appearance block of " +
                        std::to_string(spec.appearance_dim));
  num::Tensor f({static_cast<std::size_t>(spec.feature_dim())});
  f[landmark] = 1.0;
  const double orient[4] = {std::sin(heading), std::cos(heading), std::sin(elevation), std::cos(elevation)};
  for (int t = 0; t < spec.orientation_tiles; ++t)
    for (int j = 0; j < 4; ++j) f[spec.appearance_dim + 4 * t + j] = orient[j];
  return f;
}

num::Tensor observed_direction_feature(const NavGraph& graph, int from, int to, const FeatureSpec& spec) {
  const Edge& e = graph.edge(from, to);
  num::Tensor f = direction_feature(graph.viewpoint(to).landmark, e.heading, e.elevation, spec);
  if (spec.noise_sigma > 0.0) {
    Rng rng(derive_seed({graph.world_id(), static_cast<std::uint64_t>(from), static_cast<std::uint64_t>(to)}));
    double norm = 0.0;
    for (int i = 0; i < spec.appearance_dim; ++i) {
      f[i] += rng.normal(0.0, spec.noise_sigma);
      norm += f[i] * f[i];
    }
    norm = std::sqrt(norm);
    for (int i = 0; i < spec.appearance_dim; ++i) f[i] /= norm;
  }
  return f;
}

}  // namespace selfmon::worldgen
