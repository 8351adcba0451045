#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "selfmon/inference.hpp"

namespace selfmon::metrics {

double navigation_error(const worldgen::NavGraph& graph, int final_viewpoint, int goal);
bool success(double ne, double threshold);  // strict: ne < threshold
bool oracle_success(const worldgen::NavGraph& graph, std::span<const int> trajectory, int goal, double threshold);
double spl(bool success, double shortest, double taken);

struct EpisodeResult {
  int episode_id = -1;
  double ne = 0.0;
  bool success = false;
  bool oracle_success = false;
  double spl = 0.0;
  double path_length = 0.0;  // executed walk, backtracks included
  double shortest = 0.0;
  double final_progress = 0.5;  // normalized monitor output at the last decision
  double stitched_spl = 0.0;     // beam only; equals spl otherwise
  double stitched_length = 0.0;
};

EpisodeResult score_episode(const worldgen::NavGraph& graph, const worldgen::Episode& episode,
                            const inference::DecodeResult& decoded, double threshold);

struct Aggregate {
  std::size_t episodes = 0;
  double ne = 0.0;
  double sr = 0.0;
  double osr = 0.0;
  double spl = 0.0;
  double path_length = 0.0;
  double stitched_spl = 0.0;
  friend bool operator==(const Aggregate&, const Aggregate&) = default;
};

Aggregate aggregate(std::span<const EpisodeResult> results);

struct EvalResult {
  std::string split;
  inference::Mode mode = inference::Mode::greedy;
  std::vector<EpisodeResult> episodes;
  std::vector<inference::TrajectoryLog> logs;
  Aggregate summary;
};

/// Decodes every episode of a split. The parallel kernel writes results by index, so
/// both variants return identical output.
EvalResult evaluate_split_serial(const agent::AgentModel& model, const worldgen::Benchmark& bench,
                                 worldgen::Split split, const inference::DecodeOptions& options);
EvalResult evaluate_split_parallel(const agent::AgentModel& model, const worldgen::Benchmark& bench,
                                   worldgen::Split split, const inference::DecodeOptions& options, int threads);

/// Success rate of a policy that picks uniformly among STOP and the navigable
/// directions, estimated from `rollouts` runs cycling through the split's episodes.
double random_policy_success_serial(const worldgen::Benchmark& bench, worldgen::Split split, int rollouts,
                                    int max_steps, std::uint64_t seed);
double random_policy_success_parallel(const worldgen::Benchmark& bench, worldgen::Split split, int rollouts,
                                      int max_steps, std::uint64_t seed, int threads);

struct Diagonality {
  std::vector<double> mean_position;  // per step index
  double spearman = 0.0;
  bool degenerate = false;
  std::size_t pairs = 0;
};

/// Rank correlation between step index and the center of mass of textual attention.
Diagonality attention_diagonality(std::span<const inference::TrajectoryLog> logs);

double spearman(std::span<const double> x, std::span<const double> y, bool* degenerate = nullptr);

struct ProgressAwareness {
  double mean_final_success = 0.0;
  double mean_final_failure = 0.0;
  double gap = 0.0;  // success minus failure; 0 unless both groups are present
  bool defined = false;
  double rising_share_success = 0.0;  // episodes whose monitor output ends above where it started
  double rising_share_failure = 0.0;
  std::size_t successes = 0;
  std::size_t failures = 0;
};

ProgressAwareness progress_awareness(const EvalResult& eval);

/// Aligned text table with columns NE, SR, OSR, SPL.
std::string format_table(const std::vector<std::pair<std::string, Aggregate>>& rows);
std::string aggregate_to_json(const Aggregate& a);

}  // namespace selfmon::metrics
