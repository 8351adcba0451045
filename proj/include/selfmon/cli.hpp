#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "selfmon/agent.hpp"
#include "selfmon/dataset.hpp"
#include "selfmon/inference.hpp"
#include "selfmon/training.hpp"

namespace selfmon::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigFailure = 2, kDataFailure = 3, kNumericFailure = 4 };

inline constexpr int kRunConfigSchemaVersion = 1;

// Columns of the ablation grid. Co-grounding is part of every row.
struct FeatureFlags {
  bool co_grounding = true;
  bool progress_monitor = true;    // false: lambda = 1
  bool beam = false;               // inference mode columns; at most one of these two
  bool progress_inference = false;
  friend bool operator==(const FeatureFlags&, const FeatureFlags&) = default;
};

// Unset fields fall back to the preset of the benchmark.
struct DimOverrides {
  std::optional<std::size_t> d_embed, d_x, d_h, d_g, d_a, max_length, k_max;
  std::optional<double> dropout;
  std::optional<bool> use_batchnorm;
  friend bool operator==(const DimOverrides&, const DimOverrides&) = default;
};

struct RunConfig {
  std::string benchmark;
  std::string preset = "desk";
  DimOverrides dims;
  double lr = 3e-3;
  int batch = 8;
  int epochs = 40;
  double lambda = 0.5;
  std::size_t beam_size = 5;
  int max_steps = 10;
  bool pm_score = true;  // beam scoring uses the progress estimate
  bool state_factored = false;
  FeatureFlags flags;
  std::uint64_t seed = 1;
  bool deterministic = false;
  int threads = 1;
  std::string out_dir = ".";
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

std::string run_config_to_json(const RunConfig& cfg);
/// Keys missing from `text` keep the values already in `base`. Unknown keys are errors.
RunConfig run_config_from_json(const std::string& text, RunConfig base = {});
/// Throws ConfigError when fields contradict each other (lambda vs progress monitor, two
/// inference modes, co-grounding disabled, nonpositive sizes).
void validate(const RunConfig& cfg);

/// Sets lr and batch: "desk" (3e-3, 8) or "full-scale" (1e-4, 64).
void apply_hyperparameters(RunConfig& cfg, const std::string& name);

inference::Mode inference_mode(const RunConfig& cfg);
void set_inference_mode(RunConfig& cfg, inference::Mode mode);
training::TrainConfig train_config(const RunConfig& cfg);
agent::ModelDims model_dims(const RunConfig& cfg, const worldgen::Benchmark& bench);
inference::DecodeOptions decode_options(const RunConfig& cfg);

/// Lines "field: checkpoint X, benchmark Y" for every dimension the benchmark pins down
/// and the checkpoint disagrees with. Empty when compatible.
std::vector<std::string> dims_diff(const agent::ModelDims& checkpoint, const worldgen::Benchmark& bench);

struct AblationRow {
  int number = 0;
  FeatureFlags flags;
  std::optional<metrics::Aggregate> val_seen, val_unseen;  // empty when the checkpoint is missing
};

/// The 2 (loss) x 3 (inference) grid in display order.
std::vector<AblationRow> ablation_grid();
std::string format_ablation(const std::vector<AblationRow>& rows);

/// Entry point shared by the executable and the tests. Returns an ExitCode.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace selfmon::cli
