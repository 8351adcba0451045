#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "selfmon/features.hpp"
#include "selfmon/instructions.hpp"
#include "selfmon/world.hpp"

namespace selfmon::worldgen {

enum class Split { train, val_seen, val_unseen };

std::string to_string(Split split);
Split split_from_string(const std::string& name);

struct Episode {
  int id = 0;
  std::uint64_t world_id = 0;
  int start = 0;
  int goal = 0;
  std::vector<int> path;         // shortest path start..goal
  std::vector<int> instruction;  // token ids
  Split split = Split::train;
  friend bool operator==(const Episode&, const Episode&) = default;
};

struct SamplingConstraints {
  int min_edges = 3;
  int max_edges = 6;
  int max_tokens = 40;
  double min_distance = 0.0;  // meters, start-to-goal
  int max_tries = 2000;
  friend bool operator==(const SamplingConstraints&, const SamplingConstraints&) = default;
};

/// Start/goal pair with a shortest path inside the constraints, plus its rendered
/// instruction. Throws SamplingError when none is found.
Episode sample_episode(const NavGraph& graph, std::uint64_t seed, const SamplingConstraints& constraints,
                       const Vocabulary& vocab);

struct BenchmarkParams {
  std::string preset = "desk";
  WorldParams world;
  FeatureSpec features;
  SamplingConstraints sampling;
  int train_worlds = 40;
  int episodes_per_train_world = 10;
  int val_seen_worlds = 10;  // taken from the train worlds
  int episodes_per_val_seen_world = 10;
  int val_unseen_worlds = 10;
  int episodes_per_unseen_world = 10;
  double threshold_fraction = 0.3;  // success radius relative to mean episode distance
  friend bool operator==(const BenchmarkParams&, const BenchmarkParams&) = default;
};

BenchmarkParams benchmark_preset(const std::string& name);  // "desk" or "full-scale"

inline constexpr int kDatasetSchemaVersion = 1;

struct Benchmark {
  std::uint64_t seed = 0;
  BenchmarkParams params;
  Vocabulary vocab;
  double success_threshold = 3.0;  // meters
  std::vector<NavGraph> worlds;
  std::vector<Episode> episodes;

  const NavGraph& world(std::uint64_t world_id) const;
  std::vector<const Episode*> split(Split s) const;
  const Episode& episode(int id) const;
  double mean_shortest_distance() const;

  friend bool operator==(const Benchmark&, const Benchmark&) = default;
};

Benchmark generate_benchmark(std::uint64_t seed, const BenchmarkParams& params);

void save_dataset(const Benchmark& benchmark, const std::filesystem::path& path);
/// Throws ParseError (with line/column) on malformed input, VersionError on a
/// schema version other than kDatasetSchemaVersion.
Benchmark load_dataset(const std::filesystem::path& path);

std::string dataset_to_text(const Benchmark& benchmark);
Benchmark dataset_from_text(const std::string& text);

}  // namespace selfmon::worldgen
