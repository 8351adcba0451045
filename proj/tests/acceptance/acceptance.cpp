// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "selfmon/inference.hpp"
#include "selfmon/metrics.hpp"
#include "selfmon/training.hpp"
#include "support/support.hpp"

using namespace selfmon;

namespace {

constexpr std::uint64_t kBenchmarkSeed = 2024;
constexpr int kEpochs = 40;
constexpr int kRandomRollouts = 10000;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const worldgen::Benchmark& desk_benchmark() {
  static const auto bench = worldgen::generate_benchmark(kBenchmarkSeed, worldgen::benchmark_preset("desk"));
  return bench;
}

agent::ModelDims desk_dims(const worldgen::Benchmark& b) {
  return agent::ModelDims::desk(b.vocab.size(), b.params.features.feature_dim());
}

struct TrainedAgent {
  agent::AgentModel model;
  std::vector<training::EpochRecord> history;
  double seconds = 0.0;
};

// Best checkpoint (by val_unseen SR) of a training run, cached per (lambda, seed).
const TrainedAgent& trained(double lambda, std::uint64_t seed) {
  static std::map<std::pair<double, std::uint64_t>, TrainedAgent> cache;
  const auto key = std::make_pair(lambda, seed);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  const auto& bench = desk_benchmark();
  training::TrainConfig cfg;
  cfg.adam.lr = 3e-3;
  cfg.batch = 8;
  cfg.epochs = kEpochs;
  cfg.loss.lambda = lambda;
  cfg.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  training::Trainer trainer(bench, agent::AgentModel::create(desk_dims(bench), seed), cfg);
  trainer.run();
  const auto& best = trainer.best();
  TrainedAgent out{agent::AgentModel::from_parameters(best.dims, best.params), trainer.history(), seconds_since(t0)};
  std::fprintf(stderr, "  trained lambda=%.1f seed=%llu in %.1f s (best epoch %d)\n", lambda,
               static_cast<unsigned long long>(seed), out.seconds, best.best_epoch);
  return cache.emplace(key, std::move(out)).first->second;
}

metrics::EvalResult evaluate(const agent::AgentModel& m, worldgen::Split split, inference::Mode mode,
                             bool pm_score = true) {
  inference::DecodeOptions opt;
  opt.mode = mode;
  opt.beam.progress_score = pm_score;
  return metrics::evaluate_split_serial(m, desk_benchmark(), split, opt);
}

// ---------------------------------------------------------------- criteria

Verdict gradient_fidelity() {
  const auto& bench = desk_benchmark();
  const worldgen::Episode* shortest = nullptr;
  for (const auto* e : bench.split(worldgen::Split::train))
    if (!shortest || e->instruction.size() < shortest->instruction.size()) shortest = e;
  const auto& ep = *shortest;
  auto model = agent::AgentModel::create(desk_dims(bench), 17);
  // A fresh model has exactly-zero biases, which parks ReLU units on their kink.
  testsupport::jitter(model.params(), 18);
  training::LossConfig cfg;
  cfg.max_steps = 1;
  cfg.success_threshold = bench.success_threshold;
  const auto t0 = std::chrono::steady_clock::now();
  const auto report = testsupport::check_gradients(model.params(), [&](num::Tape& tape) {
    Rng rng(5);
    agent::StepContext ctx;
    const auto rec = training::rollout_episode(tape, model, bench.world(ep.world_id), bench.params.features, ep,
                                               training::RolloutMode::teacher, rng, ctx, cfg);
    return training::episode_loss(tape, rec, cfg);
  });
  const double secs = seconds_since(t0);
  return {report.failures.empty() && secs < 120.0,
          fmt("%zu gradients (%zu-token instruction), worst err/tol %.3g, %.1f s; ", report.checked,
              ep.instruction.size(), report.worst_ratio, secs) +
              testsupport::describe(report)};
}

Verdict normalization_fuzz() {
  const auto& bench = desk_benchmark();
  Rng rng(41);
  std::vector<agent::AgentModel> models;
  for (int i = 0; i < 8; ++i) {
    models.push_back(agent::AgentModel::create(desk_dims(bench), 100 + i));
    testsupport::jitter(models.back().params(), 200 + i, 0.2 * i);
  }
  double worst_sum = 0.0, worst_pad = 0.0, worst_pm = 0.0;
  int steps = 0;
  while (steps < 1000) {
    const auto& m = models[rng.index(models.size())];
    const auto& ep = bench.episodes[rng.index(bench.episodes.size())];
    const auto& g = bench.world(ep.world_id);
    num::Tape tape(&m.params());
    const auto enc = encoder::encode_instruction(tape, m.index().enc, m.dims().encoder(), ep.instruction);
    auto state = agent::initial_state(tape, m);
    int vp = ep.start;
    const int horizon = 1 + static_cast<int>(rng.index(8));
    for (int t = 0; t < horizon && steps < 1000; ++t, ++steps) {
      const auto obs = agent::observe(g, vp, bench.params.features);
      agent::StepContext ctx;
      const auto s = agent::agent_step(tape, m, state, enc, obs, ctx);
      auto total = [](const num::Var& v) {
        double acc = 0.0;
        for (double x : v.value().values()) acc += x;
        return acc;
      };
      worst_sum = std::max({worst_sum, std::abs(total(s.alpha) - 1.0), std::abs(total(s.beta) - 1.0),
                            std::abs(total(s.probs) - 1.0)});
      const auto alpha = s.alpha.value().values();
      double pad = 0.0;
      for (std::size_t l = ep.instruction.size(); l < alpha.size(); ++l) pad += alpha[l];
      worst_pad = std::max(worst_pad, pad);
      worst_pm = std::max(worst_pm, std::abs(s.p_pm.item()));
      const std::size_t k = 1 + rng.index(obs.size() - 1);
      state = agent::advance(tape, m, s, k);
      vp = obs.targets[k];
    }
  }
  return {worst_sum <= 1e-6 && worst_pad < 1e-9 && worst_pm < 1.0,
          fmt("%d steps, max |sum-1| %.2e, max padded mass %.2e, max |p_pm| %.9f", steps, worst_sum, worst_pad,
              worst_pm)};
}

Verdict progress_target_law() {
  const auto& bench = desk_benchmark();
  const auto model = agent::AgentModel::create(desk_dims(bench), 3);
  training::LossConfig cfg;
  cfg.success_threshold = bench.success_threshold;
  std::size_t bad = 0;
  for (const auto& ep : bench.episodes) {
    num::Tape tape(&model.params());
    Rng rng(1);
    agent::StepContext ctx;
    const auto rec = training::rollout_episode(tape, model, bench.world(ep.world_id), bench.params.features, ep,
                                               training::RolloutMode::teacher, rng, ctx, cfg);
    bool ok = !rec.steps.empty() && rec.steps.front().y_pm == 0.0 && rec.steps.back().y_pm == 1.0 && rec.stopped;
    for (std::size_t t = 1; t < rec.steps.size(); ++t) ok = ok && rec.steps[t].y_pm >= rec.steps[t - 1].y_pm;
    bad += !ok;
  }
  return {bad == 0, fmt("%zu teacher rollouts, %zu violations", bench.episodes.size(), bad)};
}

Verdict beam_oracle() {
  Rng rng(4);
  int cases = 0, matches = 0;
  for (int trial = 0; cases < 20 && trial < 10000; ++trial) {
    const auto g = testsupport::random_tiny_graph(2 + static_cast<int>(rng.index(4)), rng, 1);
    const int horizon = 1 + static_cast<int>(rng.index(3));
    testsupport::MarkovStubPolicy stub(g, 7000 + trial);
    const auto oracle = testsupport::enumerate_trajectories(stub, 0, horizon, true);
    if (oracle.trajectories > 50 || oracle.finished.empty()) continue;
    ++cases;
    inference::BeamOptions opt;
    opt.beam_size = oracle.trajectories;
    opt.max_steps = horizon;
    const auto r = inference::beam_search(stub, 0, opt);
    const auto& best = testsupport::best_hypothesis(oracle.finished);
    matches += r.best.trajectory == best.trajectory && r.best.actions == best.actions;
  }
  return {cases == 20 && matches == 20, fmt("exact match %d/%d", matches, cases)};
}

Verdict beam_degeneracy() {
  const auto& bench = desk_benchmark();
  const auto& m = trained(0.5, 1).model;
  std::vector<const worldgen::Episode*> eps = bench.split(worldgen::Split::val_seen);
  for (const auto* e : bench.split(worldgen::Split::val_unseen)) eps.push_back(e);
  eps.resize(std::min<std::size_t>(eps.size(), 100));
  int matches = 0;
  for (const auto* ep : eps) {
    const auto& g = bench.world(ep->world_id);
    inference::AgentPolicy p1(m, g, bench.params.features, ep->instruction);
    inference::AgentPolicy p2(m, g, bench.params.features, ep->instruction);
    inference::BeamOptions opt;
    opt.beam_size = 1;
    const auto beam = inference::beam_search(p1, ep->start, opt);
    const auto greedy = inference::greedy_decode(p2, ep->start, opt.max_steps);
    matches += beam.best.trajectory == greedy.visited;
  }
  return {eps.size() == 100 && matches == 100, fmt("%d/%zu identical trajectories", matches, eps.size())};
}

Verdict desk_learning() {
  const auto& bench = desk_benchmark();
  const auto& agent = trained(0.5, 1);
  const double random_sr =
      metrics::random_policy_success_serial(bench, worldgen::Split::val_unseen, kRandomRollouts, 10, 99);
  const auto seen = evaluate(agent.model, worldgen::Split::val_seen, inference::Mode::greedy).summary;
  const auto unseen = evaluate(agent.model, worldgen::Split::val_unseen, inference::Mode::greedy).summary;
  const bool ok = seen.sr >= 0.80 && unseen.sr >= random_sr + 0.30 && agent.seconds < 900.0 && kEpochs <= 60;
  return {ok, fmt("val_seen SR %.3f, val_unseen SR %.3f, random SR %.4f, %d epochs in %.0f s", seen.sr, unseen.sr,
                  random_sr, kEpochs, agent.seconds)};
}

Verdict ablation_direction() {
  double beam_with = 0, beam_without = 0, prog = 0, greedy = 0;
  int beam_strict = 0, prog_strict = 0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto& full = trained(0.5, seed).model;
    const auto& base = trained(1.0, seed).model;
    const double bw = evaluate(full, worldgen::Split::val_unseen, inference::Mode::beam, true).summary.sr;
    const double bo = evaluate(base, worldgen::Split::val_unseen, inference::Mode::beam, false).summary.sr;
    const double pi = evaluate(full, worldgen::Split::val_unseen, inference::Mode::progress).summary.sr;
    const double gr = evaluate(full, worldgen::Split::val_unseen, inference::Mode::greedy).summary.sr;
    beam_with += bw / 3;
    beam_without += bo / 3;
    prog += pi / 3;
    greedy += gr / 3;
    beam_strict += bw > bo;
    prog_strict += pi > gr;
    per_seed += fmt(" [seed %llu: beam %.2f/%.2f, progress %.2f/%.2f]", static_cast<unsigned long long>(seed), bw, bo,
                    pi, gr);
  }
  const bool ok = beam_with >= beam_without - 0.02 && prog >= greedy - 0.02 && beam_strict >= 2 && prog_strict >= 2;
  return {ok, fmt("beam %.3f vs %.3f (strict %d/3), progress %.3f vs greedy %.3f (strict %d/3);", beam_with,
                  beam_without, beam_strict, prog, greedy, prog_strict) +
                  per_seed};
}

Verdict attention_diagonality() {
  const auto& m = trained(0.5, 1).model;
  std::vector<inference::TrajectoryLog> successes;
  for (auto split : {worldgen::Split::val_seen, worldgen::Split::val_unseen}) {
    const auto r = evaluate(m, split, inference::Mode::greedy);
    for (std::size_t i = 0; i < r.logs.size(); ++i)
      if (r.episodes[i].success) successes.push_back(r.logs[i]);
  }
  if (successes.empty()) return {false, "no successful episodes"};
  const auto d = metrics::attention_diagonality(successes);
  return {!d.degenerate && d.spearman > 0.5,
          fmt("Spearman %.3f over %zu steps of %zu successful episodes%s", d.spearman, d.pairs, successes.size(),
              d.degenerate ? " (degenerate)" : "")};
}

Verdict failure_awareness() {
  const auto& m = trained(0.5, 1).model;
  metrics::EvalResult pooled;
  for (auto split : {worldgen::Split::val_seen, worldgen::Split::val_unseen}) {
    auto r = evaluate(m, split, inference::Mode::greedy);
    pooled.episodes.insert(pooled.episodes.end(), r.episodes.begin(), r.episodes.end());
    pooled.logs.insert(pooled.logs.end(), r.logs.begin(), r.logs.end());
  }
  const auto a = metrics::progress_awareness(pooled);
  if (!a.defined)
    return {false, fmt("undefined: %zu successes, %zu failures; mean final progress on successes %.3f",
                       a.successes, a.failures, a.mean_final_success)};
  return {a.mean_final_failure < a.mean_final_success && a.gap >= 0.1,
          fmt("success %.3f (n=%zu), failure %.3f (n=%zu), gap %.3f", a.mean_final_success, a.successes,
              a.mean_final_failure, a.failures, a.gap)};
}

Verdict determinism() {
  auto p = worldgen::benchmark_preset("desk");
  const auto b1 = worldgen::generate_benchmark(kBenchmarkSeed, p);
  const auto& bench = desk_benchmark();
  const bool same_bench = worldgen::dataset_to_text(b1) == worldgen::dataset_to_text(bench);

  training::TrainConfig cfg;
  cfg.adam.lr = 3e-3;
  cfg.epochs = 2;
  cfg.seed = 11;
  auto train = [&] {
    training::Trainer t(bench, agent::AgentModel::create(desk_dims(bench), 11), cfg);
    t.run();
    std::string log;
    for (const auto& r : t.history()) log += training::epoch_to_jsonl(r);
    std::string traj;
    for (auto mode : {inference::Mode::greedy, inference::Mode::progress, inference::Mode::beam}) {
      inference::DecodeOptions opt;
      opt.mode = mode;
      for (const auto& l : metrics::evaluate_split_serial(t.model(), bench, worldgen::Split::val_unseen, opt).logs)
        traj += inference::trajectory_to_jsonl(l);
    }
    return std::make_tuple(training::checkpoint_to_text(t.checkpoint()), log, traj);
  };
  const auto a = train(), b = train();
  const bool same_ck = std::get<0>(a) == std::get<0>(b);
  const bool same_log = std::get<1>(a) == std::get<1>(b);
  const bool same_traj = std::get<2>(a) == std::get<2>(b);

  // Interrupt mid-epoch, round-trip the checkpoint through text, continue.
  training::Trainer straight(bench, agent::AgentModel::create(desk_dims(bench), 11), cfg);
  straight.run();
  training::Trainer first(bench, agent::AgentModel::create(desk_dims(bench), 11), cfg);
  for (int i = 0; i < 37; ++i) first.step();
  const auto restored = training::checkpoint_from_text(training::checkpoint_to_text(first.checkpoint()));
  auto second = training::Trainer::resume(bench, restored);
  second.run();
  const bool same_resume =
      training::checkpoint_to_text(straight.checkpoint()) == training::checkpoint_to_text(second.checkpoint());
  return {same_bench && same_ck && same_log && same_traj && same_resume,
          fmt("benchmark %s, checkpoints %s, logs %s, trajectories %s, resumed run %s", same_bench ? "equal" : "DIFFER",
              same_ck ? "equal" : "DIFFER", same_log ? "equal" : "DIFFER", same_traj ? "equal" : "DIFFER",
              same_resume ? "equal" : "DIFFER")};
}

Verdict stitched_walks() {
  const auto& bench = desk_benchmark();
  const auto& m = trained(0.5, 1).model;
  std::vector<const worldgen::Episode*> eps = bench.split(worldgen::Split::val_unseen);
  eps.resize(std::min<std::size_t>(eps.size(), 50));
  inference::DecodeOptions opt;
  opt.mode = inference::Mode::beam;
  int ok = 0;
  for (const auto* ep : eps) {
    const auto& g = bench.world(ep->world_id);
    const auto d = inference::decode_episode(m, bench, *ep, opt);
    const auto r = metrics::score_episode(g, *ep, d, bench.success_threshold);
    const bool endpoint = !d.stitched.empty() && d.stitched.back() == d.log.final_viewpoint();
    const bool ne = metrics::navigation_error(g, d.stitched.back(), ep->goal) == r.ne;
    ok += endpoint && ne && g.is_walk(d.stitched) && r.stitched_spl <= r.spl;
  }
  return {eps.size() == 50 && ok == 50, fmt("%d/%zu beam runs satisfy the contract", ok, eps.size())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"gradient fidelity", gradient_fidelity},
      {"normalization fuzz", normalization_fuzz},
      {"progress-target law", progress_target_law},
      {"beam-search oracle", beam_oracle},
      {"beam degeneracy", beam_degeneracy},
      {"desk-scale learning", desk_learning},
      {"ablation direction", ablation_direction},
      {"attention diagonality", attention_diagonality},
      {"failure awareness", failure_awareness},
      {"determinism and persistence", determinism},
      {"stitched-walk contract", stitched_walks},
  };
  // Optional arguments select criteria by number; default runs all of them.
  std::vector<bool> selected(criteria.size(), argc < 2);
  for (int a = 1; a < argc; ++a) {
    const int n = std::atoi(argv[a]);
    if (n >= 1 && n <= static_cast<int>(criteria.size())) selected[static_cast<std::size_t>(n - 1)] = true;
  }
  int failed = 0, ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected[i]) continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s %2zu %s: %s (%.1f s)\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                v.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d of %d criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
