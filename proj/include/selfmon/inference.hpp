#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "selfmon/agent.hpp"
#include "selfmon/dataset.hpp"

namespace selfmon::inference {

/// Outputs of one decision at a viewpoint. targets[k] is where action k leads
/// (targets[0] is the viewpoint itself, i.e. STOP).
struct PolicyStep {
  std::vector<double> probs;
  double progress = 0.0;  // raw monitor output in (-1, 1)
  std::vector<double> alpha;
  std::vector<double> beta;
  std::vector<int> targets;
};

/// Decoders talk to the agent through opaque state handles so that a state can be
/// revisited (backtracking, beam branches) without re-running history.
class NavigationPolicy {
 public:
  virtual ~NavigationPolicy() = default;
  virtual int initial_state() = 0;
  virtual const PolicyStep& evaluate(int state, int viewpoint) = 0;
  /// State after taking `action` from the decision evaluate(state, viewpoint).
  virtual int advance(int state, int viewpoint, std::size_t action) = 0;
  /// Number of distinct (state, viewpoint) decisions computed so far.
  virtual std::size_t expansions() const = 0;
};

/// Evaluation-mode agent on a single instruction, with all decisions cached.
class AgentPolicy final : public NavigationPolicy {
 public:
  AgentPolicy(const agent::AgentModel& model, const worldgen::NavGraph& graph, const worldgen::FeatureSpec& spec,
              const std::vector<int>& instruction);

  int initial_state() override;
  const PolicyStep& evaluate(int state, int viewpoint) override;
  int advance(int state, int viewpoint, std::size_t action) override;
  std::size_t expansions() const override { return cache_.size(); }

 private:
  struct Cached {
    agent::StepResult result;
    PolicyStep step;
    std::map<std::size_t, int> children;
  };

  const agent::AgentModel& model_;
  const worldgen::NavGraph& graph_;
  worldgen::FeatureSpec spec_;
  num::Tape tape_;
  encoder::InstructionEncoding enc_;
  std::vector<agent::AgentState> states_;
  std::map<std::pair<int, int>, Cached> cache_;
  std::map<int, agent::Observation> observations_;
};

double normalize_progress(double p_pm);

struct StepLog {
  int t = 0;
  int viewpoint = 0;
  std::size_t action = 0;
  int target = 0;
  std::vector<double> probs;
  std::vector<double> alpha;
  std::vector<double> beta;
  double p_pm = 0.0;
  bool rejected = false;  // progress inference moved there and came back
  bool fallback = false;  // all alternatives exhausted, best action forced
};

struct TrajectoryLog {
  int episode_id = -1;
  std::size_t instruction_length = 0;
  std::vector<int> visited;  // executed walk, backtracks included
  std::vector<StepLog> steps;
  bool stopped = false;
  bool warning = false;  // beam: nothing finished
  std::size_t expansions = 0;
  double final_ne = 0.0;

  int final_viewpoint() const { return visited.back(); }
};

TrajectoryLog greedy_decode(NavigationPolicy& policy, int start, int max_steps);

/// Greedy, but a move whose next progress estimate is lower than the current one is
/// undone and the next-best untried action is taken instead.
TrajectoryLog progress_inference(NavigationPolicy& policy, int start, int max_steps, std::size_t k_max);

struct Hypothesis {
  std::vector<int> trajectory;
  std::vector<std::size_t> actions;
  std::vector<std::pair<double, double>> records;  // (p_k, p_pm) per decision
  int state = -1;
  double score = 0.0;
  bool finished = false;

  int viewpoint() const { return trajectory.back(); }
};

struct BeamOptions {
  std::size_t beam_size = 5;
  int max_steps = 10;
  bool progress_score = true;  // false: scores are pure action log-probabilities
  bool state_factored = false;
};

struct BeamResult {
  Hypothesis best;
  std::vector<Hypothesis> retained;  // every hypothesis that held a beam slot
  bool warning = false;
  double best_pruned_finished = -1e300;
};

/// Candidate order used for selection: higher score, then lower viewpoint id,
/// then lexicographically smaller trajectory and action sequence.
bool hypothesis_before(const Hypothesis& a, const Hypothesis& b);

BeamResult beam_search(NavigationPolicy& policy, int start, const BeamOptions& options);

/// One walk that traverses every retained trajectory, backtracking to the fork between
/// consecutive ones, with the final hypothesis traversed last.
std::vector<int> stitch_full_trajectory(const std::vector<Hypothesis>& retained, const Hypothesis& final,
                                        const worldgen::NavGraph& graph);

enum class Mode { greedy, progress, beam };
std::string to_string(Mode mode);
Mode mode_from_string(const std::string& name);

struct DecodeOptions {
  Mode mode = Mode::greedy;
  int max_steps = 10;
  BeamOptions beam;
};

struct DecodeResult {
  TrajectoryLog log;
  std::vector<int> stitched;  // beam only
};

/// Runs one episode in the requested mode. Beam logs hold the selected hypothesis.
DecodeResult decode_episode(const agent::AgentModel& model, const worldgen::Benchmark& bench,
                            const worldgen::Episode& episode, const DecodeOptions& options);

/// One line-delimited record per step.
std::string trajectory_to_jsonl(const TrajectoryLog& log);

}  // namespace selfmon::inference
