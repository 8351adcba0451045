#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "selfmon/inference.hpp"
#include "selfmon/rng.hpp"
#include "selfmon/tape.hpp"
#include "selfmon/world.hpp"

namespace testsupport {

using namespace selfmon;

// ---------------------------------------------------------------- finite differences

struct GradMismatch {
  std::string param;
  std::size_t element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradReport {
  std::size_t checked = 0;
  std::vector<GradMismatch> failures;
  double worst_ratio = 0.0;  // max |a - n| / tolerance
};

/// Central differences over every element of every trainable parameter. `f` builds a
/// scalar on a fresh tape bound to `params` and must be deterministic.
inline GradReport check_gradients(num::ParameterSet& params, const std::function<num::Var(num::Tape&)>& f,
                                  double step = 1e-5, double rel = 1e-4, double abs_tol = 1e-7,
                                  std::size_t stride = 1) {
  GradReport report;
  num::GradientSet analytic;
  {
    num::Tape tape(&params);
    const num::Var y = f(tape);
    tape.backward(y);
    analytic = tape.parameter_gradients();
  }
  auto eval = [&] {
    num::Tape tape(&params);
    return f(tape).item();
  };
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!params[p].trainable) continue;
    auto& values = params[p].tensor.storage();
    for (std::size_t i = 0; i < values.size(); i += stride) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = eval();
      values[i] = saved - step;
      const double down = eval();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[p][i];
      const double tol = std::max(rel * std::max(std::abs(a), std::abs(numeric)), abs_tol);
      const double err = std::abs(a - numeric);
      report.worst_ratio = std::max(report.worst_ratio, err / tol);
      if (err > tol) report.failures.push_back({params[p].name, i, a, numeric});
      ++report.checked;
    }
  }
  return report;
}

/// Moves every parameter (frozen statistics included) off the exact-zero biases of a
/// fresh model, where ReLU units sit on their kink and finite differences are meaningless.
inline void jitter(num::ParameterSet& params, std::uint64_t seed, double scale = 0.05) {
  Rng rng(seed);
  for (auto& p : params) {
    const bool variance = p.name.size() > 4 && p.name.compare(p.name.size() - 4, 4, ".var") == 0;
    for (auto& v : p.tensor.values()) v = variance ? 0.5 + rng.uniform() : v + scale * rng.normal();
  }
}

inline std::string describe(const GradReport& r, std::size_t limit = 5) {
  std::string out = std::to_string(r.failures.size()) + " of " + std::to_string(r.checked) + " mismatched";
  for (std::size_t i = 0; i < r.failures.size() && i < limit; ++i) {
    const auto& f = r.failures[i];
    out += "; " + f.param + "[" + std::to_string(f.element) + "] analytic " + std::to_string(f.analytic) +
           " numeric " + std::to_string(f.numeric);
  }
  return out;
}

// ---------------------------------------------------------------- graphs

/// Graph from explicit positions and undirected edges; landmarks default to the id.
inline worldgen::NavGraph make_graph(const std::vector<worldgen::Vec3>& positions,
                                     const std::vector<std::pair<int, int>>& edges,
                                     std::vector<int> landmarks = {}, std::uint64_t world_id = 1) {
  std::vector<worldgen::Viewpoint> vps;
  for (std::size_t i = 0; i < positions.size(); ++i)
    vps.push_back({static_cast<int>(i), positions[i], landmarks.empty() ? static_cast<int>(i) : landmarks[i]});
  std::vector<std::vector<worldgen::Edge>> adj(positions.size());
  for (auto [a, b] : edges) {
    adj[a].push_back(worldgen::make_edge(positions[a], positions[b], b));
    adj[b].push_back(worldgen::make_edge(positions[b], positions[a], a));
  }
  return worldgen::NavGraph(world_id, std::move(vps), std::move(adj));
}

/// Points 0..n-1 spaced `gap` meters apart along +y, consecutive ones linked.
inline worldgen::NavGraph corridor(int n, double gap = 2.0) {
  std::vector<worldgen::Vec3> pos;
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < n; ++i) {
    pos.push_back({0.0, gap * i, 0.0});
    if (i) edges.emplace_back(i - 1, i);
  }
  return make_graph(pos, edges);
}

/// Random connected graph on n viewpoints: spanning tree plus a few extra edges.
inline worldgen::NavGraph random_tiny_graph(int n, Rng& rng, int extra_edges = 1) {
  std::vector<worldgen::Vec3> pos;
  for (int i = 0; i < n; ++i) pos.push_back({rng.uniform(0, 10), rng.uniform(0, 10), 0.0});
  std::vector<std::pair<int, int>> edges;
  auto has = [&](int a, int b) {
    return std::any_of(edges.begin(), edges.end(), [&](auto e) {
      return (e.first == a && e.second == b) || (e.first == b && e.second == a);
    });
  };
  for (int i = 1; i < n; ++i) edges.emplace_back(static_cast<int>(rng.index(i)), i);
  for (int e = 0; e < extra_edges; ++e) {
    const int a = static_cast<int>(rng.index(n)), b = static_cast<int>(rng.index(n));
    if (a != b && !has(a, b)) edges.emplace_back(a, b);
  }
  return make_graph(pos, edges);
}

// ---------------------------------------------------------------- stub policies

/// Policy whose outputs are a function of (viewpoint, depth) only, drawn from a hash.
/// States record depth; children are created on demand like the real agent's cache.
class MarkovStubPolicy final : public inference::NavigationPolicy {
 public:
  MarkovStubPolicy(const worldgen::NavGraph& graph, std::uint64_t seed) : graph_(graph), seed_(seed) {}

  int initial_state() override {
    depth_.push_back(0);
    return static_cast<int>(depth_.size()) - 1;
  }
  const inference::PolicyStep& evaluate(int state, int viewpoint) override {
    auto key = std::make_pair(state, viewpoint);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    inference::PolicyStep s = step_for(viewpoint, depth_.at(state));
    return cache_.emplace(key, std::move(s)).first->second;
  }
  int advance(int state, int, std::size_t) override {
    depth_.push_back(depth_.at(state) + 1);
    return static_cast<int>(depth_.size()) - 1;
  }
  std::size_t expansions() const override { return cache_.size(); }

  /// Same outputs as evaluate(), without touching the cache.
  inference::PolicyStep step_for(int viewpoint, int depth) const {
    inference::PolicyStep s;
    s.targets.push_back(viewpoint);
    for (const auto& e : graph_.neighbors(viewpoint)) s.targets.push_back(e.target);
    Rng rng(derive_seed({seed_, static_cast<std::uint64_t>(viewpoint), static_cast<std::uint64_t>(depth)}));
    std::vector<double> w;
    double total = 0.0;
    for (std::size_t k = 0; k < s.targets.size(); ++k) {
      w.push_back(0.05 + rng.uniform());
      total += w.back();
    }
    for (double& x : w) x /= total;
    s.probs = w;
    s.progress = rng.uniform(-0.95, 0.95);
    s.beta = w;
    s.alpha = {1.0};
    return s;
  }

 private:
  const worldgen::NavGraph& graph_;
  std::uint64_t seed_;
  std::vector<int> depth_;
  std::map<std::pair<int, int>, inference::PolicyStep> cache_;
};

/// Policy with scripted per-viewpoint action probabilities and progress values.
class ScriptedPolicy final : public inference::NavigationPolicy {
 public:
  ScriptedPolicy(const worldgen::NavGraph& graph, std::map<int, std::vector<double>> probs,
                 std::map<int, double> progress)
      : graph_(graph), probs_(std::move(probs)), progress_(std::move(progress)) {}

  int initial_state() override { return 0; }
  const inference::PolicyStep& evaluate(int, int viewpoint) override {
    auto it = steps_.find(viewpoint);
    if (it != steps_.end()) return it->second;
    inference::PolicyStep s;
    s.targets.push_back(viewpoint);
    for (const auto& e : graph_.neighbors(viewpoint)) s.targets.push_back(e.target);
    auto p = probs_.find(viewpoint);
    if (p != probs_.end()) {
      s.probs = p->second;
    } else {
      s.probs.assign(s.targets.size(), 0.0);
      s.probs[0] = 1.0;
    }
    s.progress = progress_.count(viewpoint) ? progress_.at(viewpoint) : 0.0;
    s.alpha = {1.0};
    s.beta = s.probs;
    return steps_.emplace(viewpoint, std::move(s)).first->second;
  }
  int advance(int, int, std::size_t) override { return ++advances_; }
  std::size_t expansions() const override { return static_cast<std::size_t>(advances_) + 1; }

 private:
  const worldgen::NavGraph& graph_;
  std::map<int, std::vector<double>> probs_;
  std::map<int, double> progress_;
  std::map<int, inference::PolicyStep> steps_;
  int advances_ = 0;
};

// ---------------------------------------------------------------- exhaustive beam oracle

struct Enumerated {
  std::vector<inference::Hypothesis> finished;
  std::size_t trajectories = 0;  // finished plus horizon-truncated
};

/// Every action sequence of at most `horizon` decisions under a Markov stub.
inline Enumerated enumerate_trajectories(const MarkovStubPolicy& policy, int start, int horizon,
                                         bool progress_score) {
  Enumerated out;
  std::function<void(inference::Hypothesis, int)> go = [&](inference::Hypothesis h, int depth) {
    if (depth == horizon) {
      ++out.trajectories;
      return;
    }
    const auto s = policy.step_for(h.viewpoint(), depth);
    const double pm = progress_score ? inference::normalize_progress(s.progress) : 1.0;
    for (std::size_t k = 0; k < s.probs.size(); ++k) {
      inference::Hypothesis c = h;
      c.score += std::log(pm * s.probs[k]);
      c.actions.push_back(k);
      c.records.emplace_back(s.probs[k], s.progress);
      if (k == 0) {
        c.finished = true;
        out.finished.push_back(c);
        ++out.trajectories;
      } else {
        c.trajectory.push_back(s.targets[k]);
        go(c, depth + 1);
      }
    }
  };
  inference::Hypothesis root;
  root.trajectory = {start};
  go(root, 0);
  return out;
}

inline const inference::Hypothesis& best_hypothesis(const std::vector<inference::Hypothesis>& hs) {
  return *std::min_element(hs.begin(), hs.end(), inference::hypothesis_before);
}

}  // namespace testsupport
