#include "selfmon/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include <omp.h>

#include "json.hpp"

#include "selfmon/errors.hpp"

namespace selfmon::metrics {

double navigation_error(const worldgen::NavGraph& graph, int final_viewpoint, int goal) {
  return graph.distance(final_viewpoint, goal);
}

bool success(double ne, double threshold) { return ne < threshold; }

bool oracle_success(const worldgen::NavGraph& graph, std::span<const int> trajectory, int goal, double threshold) {
  if (trajectory.empty()) throw ContractError("oracle success of an empty trajectory");
  double best = std::numeric_limits<double>::infinity();
  for (int v : trajectory) best = std::min(best, graph.distance(v, goal));
  return best < threshold;
}

double spl(bool success, double shortest, double taken) {
  if (shortest <= 0.0) throw ContractError("SPL needs a positive shortest-path length");
  if (taken < 0.0) throw ContractError("negative path length");
  return success ? shortest / std::max(shortest, taken) : 0.0;
}

EpisodeResult score_episode(const worldgen::NavGraph& graph, const worldgen::Episode& episode,
                            const inference::DecodeResult& decoded, double threshold) {
  const auto& log = decoded.log;
  EpisodeResult r;
  r.episode_id = episode.id;
  r.shortest = graph.distance(episode.start, episode.goal);
  r.ne = navigation_error(graph, log.final_viewpoint(), episode.goal);
  r.success = success(r.ne, threshold);
  r.oracle_success = oracle_success(graph, log.visited, episode.goal, threshold);
  r.path_length = graph.walk_length(log.visited);
  r.spl = spl(r.success, r.shortest, r.path_length);
  if (!log.steps.empty()) r.final_progress = inference::normalize_progress(log.steps.back().p_pm);
  if (decoded.stitched.empty()) {
    r.stitched_length = r.path_length;
    r.stitched_spl = r.spl;
  } else {
    const double ne = navigation_error(graph, decoded.stitched.back(), episode.goal);
    r.stitched_length = graph.walk_length(decoded.stitched);
    r.stitched_spl = spl(success(ne, threshold), r.shortest, r.stitched_length);
  }
  return r;
}

Aggregate aggregate(std::span<const EpisodeResult> results) {
  Aggregate a;
  a.episodes = results.size();
  if (results.empty()) return a;
  for (const auto& r : results) {
    a.ne += r.ne;
    a.sr += r.success ? 1.0 : 0.0;
    a.osr += r.oracle_success ? 1.0 : 0.0;
    a.spl += r.spl;
    a.path_length += r.path_length;
    a.stitched_spl += r.stitched_spl;
  }
  const double n = static_cast<double>(results.size());
  a.ne /= n;
  a.sr /= n;
  a.osr /= n;
  a.spl /= n;
  a.path_length /= n;
  a.stitched_spl /= n;
  return a;
}

namespace {

EvalResult evaluate_split(const agent::AgentModel& model, const worldgen::Benchmark& bench, worldgen::Split split,
                          const inference::DecodeOptions& options, int threads) {
  const auto episodes = bench.split(split);
  EvalResult out;
  out.split = worldgen::to_string(split);
  out.mode = options.mode;
  out.episodes.resize(episodes.size());
  out.logs.resize(episodes.size());
  const auto n = static_cast<std::ptrdiff_t>(episodes.size());
  auto run = [&](std::ptrdiff_t i) {
    const auto& ep = *episodes[i];
    auto decoded = inference::decode_episode(model, bench, ep, options);
    out.episodes[i] = score_episode(bench.world(ep.world_id), ep, decoded, bench.success_threshold);
    out.logs[i] = std::move(decoded.log);
  };
  if (threads <= 1) {
    for (std::ptrdiff_t i = 0; i < n; ++i) run(i);
  } else {
    std::exception_ptr error;
#pragma omp parallel for schedule(dynamic) num_threads(threads)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      try {
        run(i);
      } catch (...) {
#pragma omp critical
        if (!error) error = std::current_exception();
      }
    }
    if (error) std::rethrow_exception(error);
  }
  out.summary = aggregate(out.episodes);
  return out;
}

bool random_rollout(const worldgen::Benchmark& bench, const worldgen::Episode& ep, int max_steps,
                    std::uint64_t seed) {
  const auto& g = bench.world(ep.world_id);
  Rng rng(seed);
  int vp = ep.start;
  for (int t = 0; t < max_steps; ++t) {
    const auto& nbrs = g.neighbors(vp);
    const std::size_t k = rng.index(nbrs.size() + 1);
    if (k == 0) break;
    vp = nbrs[k - 1].target;
  }
  return success(g.distance(vp, ep.goal), bench.success_threshold);
}

}  // namespace

EvalResult evaluate_split_serial(const agent::AgentModel& model, const worldgen::Benchmark& bench,
                                 worldgen::Split split, const inference::DecodeOptions& options) {
  return evaluate_split(model, bench, split, options, 1);
}

EvalResult evaluate_split_parallel(const agent::AgentModel& model, const worldgen::Benchmark& bench,
                                   worldgen::Split split, const inference::DecodeOptions& options, int threads) {
  return evaluate_split(model, bench, split, options, std::max(threads, 1));
}

double random_policy_success_serial(const worldgen::Benchmark& bench, worldgen::Split split, int rollouts,
                                    int max_steps, std::uint64_t seed) {
  const auto episodes = bench.split(split);
  if (episodes.empty() || rollouts < 1) throw ContractError("random-policy estimate needs episodes and rollouts");
  long hits = 0;
  for (int r = 0; r < rollouts; ++r)
    hits += random_rollout(bench, *episodes[r % episodes.size()], max_steps,
                           derive_seed({seed, static_cast<std::uint64_t>(r)}));
  return static_cast<double>(hits) / rollouts;
}

double random_policy_success_parallel(const worldgen::Benchmark& bench, worldgen::Split split, int rollouts,
                                      int max_steps, std::uint64_t seed, int threads) {
  const auto episodes = bench.split(split);
  if (episodes.empty() || rollouts < 1) throw ContractError("random-policy estimate needs episodes and rollouts");
  long hits = 0;
#pragma omp parallel for reduction(+ : hits) num_threads(std::max(threads, 1))
  for (int r = 0; r < rollouts; ++r)
    hits += random_rollout(bench, *episodes[r % episodes.size()], max_steps,
                           derive_seed({seed, static_cast<std::uint64_t>(r)}));
  return static_cast<double>(hits) / rollouts;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y, bool* degenerate) {
  if (x.size() != y.size()) throw DimensionError("spearman: sequences differ in length");
  if (degenerate) *degenerate = false;
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (x.size() < 2 || sxx == 0.0 || syy == 0.0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  return sxy / std::sqrt(sxx * syy);
}

Diagonality attention_diagonality(std::span<const inference::TrajectoryLog> logs) {
  if (logs.empty()) throw ContractError("attention diagonality needs at least one trajectory log");
  Diagonality d;
  std::vector<double> steps, centers;
  std::vector<double> sums;
  std::vector<std::size_t> counts;
  for (const auto& log : logs) {
    const std::size_t L = log.instruction_length;
    if (L == 0) throw ContractError("trajectory log without instruction length");
    for (std::size_t t = 0; t < log.steps.size(); ++t) {
      const auto& alpha = log.steps[t].alpha;
      double m = 0.0;
      for (std::size_t l = 0; l < alpha.size() && l < L; ++l) m += alpha[l] * static_cast<double>(l) / L;
      steps.push_back(static_cast<double>(t));
      centers.push_back(m);
      if (sums.size() <= t) {
        sums.resize(t + 1, 0.0);
        counts.resize(t + 1, 0);
      }
      sums[t] += m;
      ++counts[t];
    }
  }
  for (std::size_t t = 0; t < sums.size(); ++t) d.mean_position.push_back(sums[t] / counts[t]);
  d.pairs = steps.size();
  d.spearman = spearman(steps, centers, &d.degenerate);
  return d;
}

ProgressAwareness progress_awareness(const EvalResult& eval) {
  ProgressAwareness a;
  double rising_s = 0.0, rising_f = 0.0;
  for (std::size_t i = 0; i < eval.episodes.size(); ++i) {
    const auto& r = eval.episodes[i];
    const auto& steps = eval.logs[i].steps;
    const bool rising = !steps.empty() && steps.back().p_pm >= steps.front().p_pm;
    if (r.success) {
      a.mean_final_success += r.final_progress;
      rising_s += rising;
      ++a.successes;
    } else {
      a.mean_final_failure += r.final_progress;
      rising_f += rising;
      ++a.failures;
    }
  }
  if (a.successes) {
    a.mean_final_success /= a.successes;
    a.rising_share_success = rising_s / a.successes;
  }
  if (a.failures) {
    a.mean_final_failure /= a.failures;
    a.rising_share_failure = rising_f / a.failures;
  }
  a.defined = a.successes > 0 && a.failures > 0;
  a.gap = a.defined ? a.mean_final_success - a.mean_final_failure : 0.0;
  return a;
}

std::string format_table(const std::vector<std::pair<std::string, Aggregate>>& rows) {
  std::size_t width = 5;
  for (const auto& [label, _] : rows) width = std::max(width, label.size());
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %8s %8s %8s %8s %6s\n", static_cast<int>(width), "", "NE", "SR", "OSR", "SPL",
                "n");
  out += buf;
  for (const auto& [label, a] : rows) {
    std::snprintf(buf, sizeof buf, "%-*s %8.3f %8.3f %8.3f %8.3f %6zu\n", static_cast<int>(width), label.c_str(),
                  a.ne, a.sr, a.osr, a.spl, a.episodes);
    out += buf;
  }
  return out;
}

std::string aggregate_to_json(const Aggregate& a) {
  return nlohmann::json{{"episodes", a.episodes}, {"NE", a.ne},   {"SR", a.sr},
                        {"OSR", a.osr},           {"SPL", a.spl}, {"path_length", a.path_length},
                        {"stitched_SPL", a.stitched_spl}}
      .dump();
}

}  // namespace selfmon::metrics
