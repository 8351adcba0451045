#pragma once

#include <cstdint>

#include "selfmon/tensor.hpp"
#include "selfmon/world.hpp"

namespace selfmon::worldgen {

/// Layout of a navigable-direction feature: an appearance block followed by the
/// orientation 4-tuple [sin heading, cos heading, sin elevation, cos elevation]
/// repeated `orientation_tiles` times.
struct FeatureSpec {
  int appearance_dim = 24;
  int orientation_tiles = 2;
  double noise_sigma = 0.05;

  int feature_dim() const { return appearance_dim + 4 * orientation_tiles; }
  friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

/// Noise-free feature: one-hot landmark appearance plus tiled orientation.
num::Tensor direction_feature(int landmark, double heading, double elevation, const FeatureSpec& spec);

/// Feature of the edge from -> to as perceived in `graph`: the appearance block
/// gets Gaussian noise seeded by (world, from, to) and is renormalized to unit length.
num::Tensor observed_direction_feature(const NavGraph& graph, int from, int to, const FeatureSpec& spec);

}  // namespace selfmon::worldgen
