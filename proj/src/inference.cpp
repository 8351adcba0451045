#include "selfmon/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"

#include "selfmon/errors.hpp"

namespace selfmon::inference {

AgentPolicy::AgentPolicy(const agent::AgentModel& model, const worldgen::NavGraph& graph,
                         const worldgen::FeatureSpec& spec, const std::vector<int>& instruction)
    : model_(model), graph_(graph), spec_(spec), tape_(&model.params()) {
  enc_ = encoder::encode_instruction(tape_, model.index().enc, model.dims().encoder(), instruction);
}

int AgentPolicy::initial_state() {
  states_.push_back(agent::initial_state(tape_, model_));
  return static_cast<int>(states_.size()) - 1;
}

const PolicyStep& AgentPolicy::evaluate(int state, int viewpoint) {
  if (state < 0 || state >= static_cast<int>(states_.size())) throw ContractError("unknown policy state");
  const auto key = std::make_pair(state, viewpoint);
  if (auto it = cache_.find(key); it != cache_.end()) return it->second.step;
  auto obs_it = observations_.find(viewpoint);
  if (obs_it == observations_.end())
    obs_it = observations_.emplace(viewpoint, agent::observe(graph_, viewpoint, spec_)).first;
  agent::StepContext ctx;
  Cached c;
  c.result = agent::agent_step(tape_, model_, states_[state], enc_, obs_it->second, ctx);
  const auto vals = [](num::Var v) { return std::vector<double>(v.value().values().begin(), v.value().values().end()); };
  c.step.probs = vals(c.result.probs);
  c.step.progress = c.result.p_pm.item();
  c.step.alpha = vals(c.result.alpha);
  c.step.beta = vals(c.result.beta);
  c.step.targets = obs_it->second.targets;
  return cache_.emplace(key, std::move(c)).first->second.step;
}

int AgentPolicy::advance(int state, int viewpoint, std::size_t action) {
  evaluate(state, viewpoint);
  Cached& c = cache_.at({state, viewpoint});
  if (action >= c.step.probs.size()) throw ContractError("action index out of range");
  if (auto it = c.children.find(action); it != c.children.end()) return it->second;
  states_.push_back(agent::advance(tape_, model_, c.result, action));
  const int id = static_cast<int>(states_.size()) - 1;
  c.children.emplace(action, id);
  return id;
}

double normalize_progress(double p_pm) { return (p_pm + 1.0) / 2.0; }

namespace {

StepLog make_log(int t, int viewpoint, std::size_t action, const PolicyStep& s) {
  StepLog l;
  l.t = t;
  l.viewpoint = viewpoint;
  l.action = action;
  l.target = s.targets.at(action);
  l.probs = s.probs;
  l.alpha = s.alpha;
  l.beta = s.beta;
  l.p_pm = s.progress;
  return l;
}

std::size_t argmax(const std::vector<double>& p) {
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

// Actions by descending probability, lower index first on ties.
std::vector<std::size_t> ranked_actions(const std::vector<double>& p) {
  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  return order;
}

}  // namespace

TrajectoryLog greedy_decode(NavigationPolicy& policy, int start, int max_steps) {
  TrajectoryLog log;
  log.visited = {start};
  int state = policy.initial_state();
  int vp = start;
  for (int t = 0; t < max_steps; ++t) {
    const PolicyStep& s = policy.evaluate(state, vp);
    const std::size_t k = argmax(s.probs);
    log.steps.push_back(make_log(t, vp, k, s));
    if (k == 0) {
      log.stopped = true;
      break;
    }
    state = policy.advance(state, vp, k);
    vp = s.targets[k];
    log.visited.push_back(vp);
  }
  log.expansions = policy.expansions();
  return log;
}

TrajectoryLog progress_inference(NavigationPolicy& policy, int start, int max_steps, std::size_t k_max) {
  TrajectoryLog log;
  log.visited = {start};
  const std::size_t budget = static_cast<std::size_t>(std::max(max_steps, 1)) * (k_max + 1);
  const std::size_t base = policy.expansions();
  auto spent = [&] { return policy.expansions() - base; };

  int state = policy.initial_state();
  int vp = start;
  int t = 0;
  for (int step = 0; step < max_steps && spent() < budget; ++step) {
    const PolicyStep& here = policy.evaluate(state, vp);
    const auto order = ranked_actions(here.probs);
    bool moved = false;
    for (std::size_t k : order) {
      if (k == 0) {
        log.steps.push_back(make_log(t++, vp, 0, here));
        log.stopped = true;
        log.expansions = spent();
        return log;
      }
      if (spent() >= budget) break;
      const int next_state = policy.advance(state, vp, k);
      const int next_vp = here.targets[k];
      const PolicyStep& there = policy.evaluate(next_state, next_vp);
      StepLog entry = make_log(t++, vp, k, here);
      if (there.progress >= here.progress) {
        log.steps.push_back(std::move(entry));
        log.visited.push_back(next_vp);
        state = next_state;
        vp = next_vp;
        moved = true;
        break;
      }
      entry.rejected = true;
      log.steps.push_back(std::move(entry));
      log.visited.push_back(next_vp);
      log.visited.push_back(vp);
    }
    if (!moved) {
      // Every alternative lowered the estimate: take the best action anyway.
      const std::size_t k = order.front();
      StepLog entry = make_log(t++, vp, k, here);
      entry.fallback = true;
      log.steps.push_back(std::move(entry));
      state = policy.advance(state, vp, k);
      vp = here.targets[k];
      log.visited.push_back(vp);
    }
  }
  log.expansions = spent();
  return log;
}

bool hypothesis_before(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.viewpoint() != b.viewpoint()) return a.viewpoint() < b.viewpoint();
  if (a.trajectory != b.trajectory) return a.trajectory < b.trajectory;
  return a.actions < b.actions;
}

BeamResult beam_search(NavigationPolicy& policy, int start, const BeamOptions& opt) {
  if (opt.beam_size < 1) throw ConfigError("beam size must be at least 1");
  BeamResult result;
  std::vector<Hypothesis> active(1);
  active[0].trajectory = {start};
  active[0].state = policy.initial_state();
  std::vector<Hypothesis> pool;
  auto best_of = [](const std::vector<Hypothesis>& hs) {
    return *std::min_element(hs.begin(), hs.end(), hypothesis_before);
  };

  for (int depth = 0; depth < opt.max_steps && !active.empty(); ++depth) {
    std::vector<Hypothesis> candidates;
    std::vector<int> parent_of;
    for (std::size_t i = 0; i < active.size(); ++i) {
      const Hypothesis& h = active[i];
      const PolicyStep& s = policy.evaluate(h.state, h.viewpoint());
      const double pm = opt.progress_score ? normalize_progress(s.progress) : 1.0;
      for (std::size_t k = 0; k < s.probs.size(); ++k) {
        Hypothesis c = h;
        c.score = h.score + std::log(pm * s.probs[k]);
        c.actions.push_back(k);
        c.records.emplace_back(s.probs[k], s.progress);
        if (k == 0)
          c.finished = true;
        else
          c.trajectory.push_back(s.targets[k]);
        candidates.push_back(std::move(c));
        parent_of.push_back(static_cast<int>(i));
      }
    }
    std::vector<std::size_t> order(candidates.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return hypothesis_before(candidates[a], candidates[b]); });

    std::vector<Hypothesis> next;
    std::vector<int> occupied;
    std::size_t taken = 0;
    for (std::size_t idx : order) {
      Hypothesis& c = candidates[idx];
      const bool blocked = opt.state_factored && !c.finished &&
                           std::find(occupied.begin(), occupied.end(), c.viewpoint()) != occupied.end();
      if (taken >= opt.beam_size || blocked) {
        if (c.finished) result.best_pruned_finished = std::max(result.best_pruned_finished, c.score);
        continue;
      }
      ++taken;
      if (c.finished) {
        pool.push_back(c);
      } else {
        const Hypothesis& parent = active[parent_of[idx]];
        c.state = policy.advance(parent.state, parent.viewpoint(), c.actions.back());
        occupied.push_back(c.viewpoint());
        next.push_back(c);
      }
      result.retained.push_back(c);
    }
    active = std::move(next);
    if (!active.empty() && !pool.empty() && best_of(active).score <= best_of(pool).score) break;
  }

  if (!pool.empty()) {
    result.best = best_of(pool);
  } else {
    result.best = best_of(active);
    result.warning = true;
  }
  return result;
}

namespace {

std::size_t common_prefix(const std::vector<int>& a, const std::vector<int>& b) {
  std::size_t n = 0;
  while (n < a.size() && n < b.size() && a[n] == b[n]) ++n;
  return n;
}

bool is_prefix(const std::vector<int>& a, const std::vector<int>& b) {
  return a.size() <= b.size() && std::equal(a.begin(), a.end(), b.begin());
}

}  // namespace

std::vector<int> stitch_full_trajectory(const std::vector<Hypothesis>& retained, const Hypothesis& final,
                                        const worldgen::NavGraph& graph) {
  const int start = final.trajectory.front();
  std::vector<std::vector<int>> trajs;
  for (const auto& h : retained) {
    if (h.trajectory.empty() || h.trajectory.front() != start)
      throw ContractError("stitched hypotheses must share the start viewpoint");
    trajs.push_back(h.trajectory);
  }
  // Drop duplicates and trajectories covered as a prefix of another one.
  std::vector<std::vector<int>> pending;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    bool covered = is_prefix(trajs[i], final.trajectory);
    for (std::size_t j = 0; j < trajs.size() && !covered; ++j) {
      if (i == j) continue;
      covered = (trajs[i] == trajs[j]) ? j < i : is_prefix(trajs[i], trajs[j]);
    }
    if (!covered) pending.push_back(trajs[i]);
  }

  std::vector<int> walk = {start};
  std::vector<int> previous = {start};
  auto traverse = [&](const std::vector<int>& next) {
    const std::size_t fork = common_prefix(previous, next);
    if (fork == 0) throw ContractError("hypotheses do not share a start");
    for (std::size_t i = previous.size() - 1; i-- > fork - 1;) walk.push_back(previous[i]);
    for (std::size_t i = fork; i < next.size(); ++i) walk.push_back(next[i]);
    previous = next;
  };
  while (!pending.empty()) {
    std::size_t best = 0, best_len = 0;
    for (std::size_t i = 0; i < pending.size(); ++i) {
      const std::size_t len = common_prefix(previous, pending[i]);
      if (len > best_len) {
        best = i;
        best_len = len;
      }
    }
    traverse(pending[best]);
    pending.erase(pending.begin() + static_cast<std::ptrdiff_t>(best));
  }
  traverse(final.trajectory);
  if (!graph.is_walk(walk)) throw ContractError("stitched trajectory is not a walk on the graph");
  return walk;
}

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::greedy: return "greedy";
    case Mode::progress: return "progress";
    case Mode::beam: return "beam";
  }
  return "unknown";
}

Mode mode_from_string(const std::string& name) {
  if (name == "greedy") return Mode::greedy;
  if (name == "progress") return Mode::progress;
  if (name == "beam") return Mode::beam;
  throw ConfigError("unknown inference mode '" + name + "' (expected greedy, progress or beam)");
}

DecodeResult decode_episode(const agent::AgentModel& model, const worldgen::Benchmark& bench,
                            const worldgen::Episode& episode, const DecodeOptions& options) {
  const auto& graph = bench.world(episode.world_id);
  AgentPolicy policy(model, graph, bench.params.features, episode.instruction);
  DecodeResult out;
  switch (options.mode) {
    case Mode::greedy:
      out.log = greedy_decode(policy, episode.start, options.max_steps);
      break;
    case Mode::progress:
      out.log = progress_inference(policy, episode.start, options.max_steps, model.dims().k_max);
      break;
    case Mode::beam: {
      BeamOptions bo = options.beam;
      bo.max_steps = options.max_steps;
      const BeamResult r = beam_search(policy, episode.start, bo);
      // Replay the selected hypothesis through the cached decisions to log it.
      int state = policy.initial_state();
      int vp = episode.start;
      out.log.visited = {vp};
      for (std::size_t t = 0; t < r.best.actions.size(); ++t) {
        const std::size_t k = r.best.actions[t];
        const PolicyStep& s = policy.evaluate(state, vp);
        out.log.steps.push_back(make_log(static_cast<int>(t), vp, k, s));
        if (k == 0) break;
        state = policy.advance(state, vp, k);
        vp = s.targets[k];
        out.log.visited.push_back(vp);
      }
      out.log.stopped = r.best.finished;
      out.log.warning = r.warning;
      out.stitched = stitch_full_trajectory(r.retained, r.best, graph);
      break;
    }
  }
  out.log.episode_id = episode.id;
  out.log.instruction_length = episode.instruction.size();
  out.log.expansions = policy.expansions();
  out.log.final_ne = graph.distance(out.log.final_viewpoint(), episode.goal);
  return out;
}

std::string trajectory_to_jsonl(const TrajectoryLog& log) {
  std::string out;
  for (const auto& s : log.steps) {
    nlohmann::json j = {{"episode", log.episode_id}, {"t", s.t},         {"viewpoint", s.viewpoint},
                        {"action", s.action},        {"target", s.target}, {"p", s.probs},
                        {"alpha", s.alpha},          {"beta", s.beta},     {"p_pm", s.p_pm}};
    if (s.rejected) j["rejected"] = true;
    if (s.fallback) j["fallback"] = true;
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace selfmon::inference
