#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "selfmon/encoder.hpp"
#include "selfmon/features.hpp"
#include "selfmon/lstm.hpp"
#include "selfmon/world.hpp"

namespace selfmon::agent {

using num::Tape;
using num::Tensor;
using num::Var;

struct ModelDims {
  std::size_t vocab_size = 0;
  std::size_t d_embed = 32;
  std::size_t d_x = 64;
  std::size_t d_h = 64;
  std::size_t d_v = 32;
  std::size_t d_g = 48;
  std::size_t d_a = 64;
  std::size_t max_length = 40;  // L_max
  std::size_t k_max = 5;        // navigable directions, STOP excluded
  double dropout = 0.5;
  bool use_batchnorm = true;

  static ModelDims desk(std::size_t vocab_size, std::size_t d_v);
  static ModelDims full_scale(std::size_t vocab_size, std::size_t d_v);
  encoder::EncoderDims encoder() const { return {vocab_size, d_embed, d_x, max_length}; }
  void validate() const;
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

struct ParamIndex {
  encoder::EncoderParams enc;
  std::size_t bn1_gamma = 0, bn1_beta = 0, bn1_mean = 0, bn1_var = 0;
  std::size_t fc_w = 0, fc_b = 0;
  std::size_t bn2_gamma = 0, bn2_beta = 0, bn2_mean = 0, bn2_var = 0;
  std::size_t w_x = 0, b_x = 0;
  std::size_t w_v = 0, b_v = 0;
  std::size_t dec_w = 0, dec_b = 0;
  std::size_t w_a = 0, b_a = 0;
  std::size_t w_h = 0, b_h = 0;
  std::size_t w_pm = 0, b_pm = 0;
  std::size_t act_w = 0, act_b = 0, act_start = 0;
};

class AgentModel {
 public:
  AgentModel() = default;
  static AgentModel create(const ModelDims& dims, std::uint64_t seed);
  /// Adopts a loaded parameter set after checking every expected name and shape.
  static AgentModel from_parameters(const ModelDims& dims, num::ParameterSet params);

  const ModelDims& dims() const { return dims_; }
  num::ParameterSet& params() { return params_; }
  const num::ParameterSet& params() const { return params_; }
  const ParamIndex& index() const { return index_; }

  friend bool operator==(const AgentModel& a, const AgentModel& b) {
    return a.dims_ == b.dims_ && a.params_ == b.params_;
  }

 private:
  void build_index();

  ModelDims dims_;
  num::ParameterSet params_;
  ParamIndex index_;
};

/// Directions available at a viewpoint. Index 0 is STOP (all-zero feature, target =
/// the viewpoint itself); the rest follow neighbor id order.
struct Observation {
  int viewpoint = 0;
  std::vector<int> targets;
  Tensor features;  // [K x d_v]
  std::size_t size() const { return targets.size(); }
};

Observation observe(const worldgen::NavGraph& graph, int viewpoint, const worldgen::FeatureSpec& spec);
/// Direction index leading to `target`, or 0 for STOP when target == viewpoint.
std::size_t direction_of(const Observation& obs, int target);

/// Column sums of the inputs seen by the two normalization layers of g.
struct BatchNormAccumulator {
  std::vector<double> sum1, sq1, sum2, sq2;
  double count = 0.0;

  void add(const Tensor& pre_bn1, const Tensor& pre_bn2);
  void merge(const BatchNormAccumulator& other);
};

/// Moves running statistics toward the accumulated batch statistics.
void update_batchnorm(AgentModel& model, const BatchNormAccumulator& acc, double momentum);

struct StepContext {
  Rng* rng = nullptr;                 // dropout on when set
  BatchNormAccumulator* bn = nullptr;  // statistics collection
};

struct AgentState {
  Var h;
  Var c;
  Var prev_action;  // a_{t-1}
};

AgentState initial_state(Tape& tape, const AgentModel& model);

struct TextualGrounding {
  Var alpha;  // [L_max], zero on padding
  Var x_hat;  // [d_x]
};
TextualGrounding textual_grounding(Tape& tape, const AgentModel& model, Var h_prev,
                                   const encoder::InstructionEncoding& enc);

/// g applied to every direction feature: [K x d_g].
Var project_directions(Tape& tape, const AgentModel& model, const Observation& obs, StepContext& ctx);

struct VisualGrounding {
  Var beta;   // [K]
  Var v_hat;  // [d_g]
};
VisualGrounding visual_grounding(Tape& tape, const AgentModel& model, Var h_prev, Var projected);

num::LstmOutput decode_step(Tape& tape, const AgentModel& model, Var x_hat, Var v_hat, Var prev_action, Var h_prev,
                            Var c_prev);

struct ActionScores {
  Var logits;
  Var probs;
};
ActionScores action_distribution(Tape& tape, const AgentModel& model, Var h, Var x_hat, Var projected);

struct ProgressOutput {
  Var h_pm;
  Var p_pm;  // scalar in (-1, 1)
};
ProgressOutput progress_monitor(Tape& tape, const AgentModel& model, Var h_prev, Var c, Var v_hat, Var alpha);

struct StepResult {
  Var logits;
  Var probs;
  Var p_pm;
  Var alpha;
  Var beta;
  Var x_hat;
  Var v_hat;
  Var projected;
  Var h;
  Var c;
};

/// One decoder step: grounding from h_{t-1}, LSTM update, action scores from h_t,
/// progress from (h_{t-1}, c_t, v_hat, alpha).
StepResult agent_step(Tape& tape, const AgentModel& model, const AgentState& state,
                      const encoder::InstructionEncoding& enc, const Observation& obs, StepContext& ctx);

/// State after committing to `action` at the step described by `step`.
AgentState advance(Tape& tape, const AgentModel& model, const StepResult& step, std::size_t action);

}  // namespace selfmon::agent
