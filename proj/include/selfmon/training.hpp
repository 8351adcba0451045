#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "selfmon/adam.hpp"
#include "selfmon/agent.hpp"
#include "selfmon/dataset.hpp"
#include "selfmon/metrics.hpp"

namespace selfmon::training {

struct LossConfig {
  double lambda = 0.5;
  double success_threshold = 3.0;  // meters; replaced by the benchmark's value in training
  int max_steps = 10;
  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

/// 1 inside the success radius, otherwise (d_start - d_now) / d_start.
double progress_target(double d_start, double d_now, double threshold);

/// Direction index of the next hop on the shortest path to `goal` (0 = STOP at the goal).
std::size_t teacher_action(const worldgen::NavGraph& graph, int current, int goal);

enum class RolloutMode { sample, teacher };

struct StepRecord {
  int viewpoint = 0;
  std::size_t action = 0;   // executed
  std::size_t teacher = 0;  // cross-entropy target
  double d_now = 0.0;
  double y_pm = 0.0;
  num::Var logits;
  num::Var probs;
  num::Var p_pm;
  num::Var alpha;
};

struct RolloutRecord {
  double d_start = 0.0;
  std::vector<StepRecord> steps;
  std::vector<int> trajectory;
  bool stopped = false;
};

RolloutRecord rollout_episode(num::Tape& tape, const agent::AgentModel& model, const worldgen::NavGraph& graph,
                              const worldgen::FeatureSpec& spec, const worldgen::Episode& episode, RolloutMode mode,
                              Rng& rng, agent::StepContext& ctx, const LossConfig& cfg);

/// lambda * sum(-log p_teacher) + (1 - lambda) * sum((y_pm - p_pm)^2) over executed steps.
num::Var episode_loss(num::Tape& tape, const RolloutRecord& rollout, const LossConfig& cfg);

struct EpisodeGradient {
  double loss = 0.0;
  num::GradientSet grads;
  agent::BatchNormAccumulator bn;
};

/// Training-mode rollout (dropout, sampling) of one episode with its own tape and RNG.
EpisodeGradient episode_gradient(const agent::AgentModel& model, const worldgen::Benchmark& bench,
                                 const worldgen::Episode& episode, RolloutMode mode, const LossConfig& cfg,
                                 std::uint64_t seed);

struct BatchGradient {
  double mean_loss = 0.0;
  std::vector<double> losses;
  num::GradientSet grads;  // mean over episodes
  agent::BatchNormAccumulator bn;
};

/// Episode gradients reduced in episode order. The parallel kernel computes episodes
/// concurrently and performs the same ordered reduction, so results are bit-identical.
BatchGradient batch_gradient_serial(const agent::AgentModel& model, const worldgen::Benchmark& bench,
                                    std::span<const worldgen::Episode* const> episodes,
                                    std::span<const std::uint64_t> seeds, RolloutMode mode, const LossConfig& cfg);
BatchGradient batch_gradient_parallel(const agent::AgentModel& model, const worldgen::Benchmark& bench,
                                      std::span<const worldgen::Episode* const> episodes,
                                      std::span<const std::uint64_t> seeds, RolloutMode mode, const LossConfig& cfg,
                                      int threads);

struct TrainConfig {
  num::AdamConfig adam;  // adam.lr == 0 freezes the model
  int batch = 8;
  int epochs = 40;
  LossConfig loss;
  std::uint64_t seed = 1;
  double clip_norm = 5.0;
  double bn_momentum = 0.1;
  int threads = 1;
  RolloutMode mode = RolloutMode::sample;
  bool validate = true;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

std::string train_config_to_json(const TrainConfig& cfg);
std::string model_dims_to_json(const agent::ModelDims& dims);
agent::ModelDims model_dims_from_json(const std::string& text);
TrainConfig train_config_from_json(const std::string& text);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  metrics::Aggregate val_seen;
  metrics::Aggregate val_unseen;
  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

/// Line-delimited records {epoch, split, NE, SR, OSR, SPL, loss} for one epoch.
std::string epoch_to_jsonl(const EpochRecord& r);

inline constexpr int kCheckpointSchemaVersion = 1;

struct Checkpoint {
  agent::ModelDims dims;
  num::ParameterSet params;  // batch-norm statistics included as frozen parameters
  num::AdamState adam;
  std::string rng_state;
  std::string config;      // serialized TrainConfig
  std::string run_config;  // operator-level run description, stored verbatim when set
  int epoch = 0;       // completed epochs
  std::size_t cursor = 0;
  std::vector<int> order;  // episode ids of the running epoch
  double epoch_loss_sum = 0.0;
  int epoch_batches = 0;
  std::uint64_t step = 0;
  double best_sr = -1.0;
  int best_epoch = 0;
  std::vector<EpochRecord> history;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::string checkpoint_to_text(const Checkpoint& ck);
Checkpoint checkpoint_from_text(const std::string& text);
void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

class Trainer {
 public:
  Trainer(const worldgen::Benchmark& bench, agent::AgentModel model, TrainConfig cfg);
  /// Continues exactly where `ck` left off; `threads` may differ from the original run.
  static Trainer resume(const worldgen::Benchmark& bench, const Checkpoint& ck, int threads = 1);

  /// One optimizer step over the next batch. Starts a new epoch when needed.
  double step();
  bool epoch_done() const { return cursor_ >= order_.size() && !order_.empty(); }
  /// Closes the running epoch: validation, best-model tracking, log record.
  EpochRecord finish_epoch();
  /// Runs until cfg.epochs epochs are complete.
  void run(const std::function<void(const EpochRecord&)>& on_epoch = {});

  Checkpoint checkpoint() const;
  const Checkpoint& best() const { return best_; }
  const agent::AgentModel& model() const { return model_; }
  const TrainConfig& config() const { return cfg_; }
  int epochs_completed() const { return epoch_; }
  const std::vector<EpochRecord>& history() const { return history_; }

 private:
  void begin_epoch();

  const worldgen::Benchmark& bench_;
  agent::AgentModel model_;
  TrainConfig cfg_;
  num::AdamState adam_;
  Rng rng_;
  int epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<int> order_;
  double epoch_loss_sum_ = 0.0;
  int epoch_batches_ = 0;
  double best_sr_ = -1.0;
  int best_epoch_ = 0;
  Checkpoint best_;
  std::vector<EpochRecord> history_;
};

}  // namespace selfmon::training
