#include <doctest.h>

#include <cmath>
#include <set>

#include "json.hpp"

#include "selfmon/errors.hpp"
#include "selfmon/inference.hpp"
#include "support/support.hpp"

using namespace selfmon;
using namespace selfmon::inference;
using testsupport::MarkovStubPolicy;
using testsupport::ScriptedPolicy;

namespace {

worldgen::Benchmark small_bench() {
  auto p = worldgen::benchmark_preset("desk");
  p.train_worlds = 2;
  p.episodes_per_train_world = 5;
  p.val_seen_worlds = 1;
  p.episodes_per_val_seen_world = 5;
  p.val_unseen_worlds = 2;
  p.episodes_per_unseen_world = 5;
  return worldgen::generate_benchmark(31, p);
}

agent::AgentModel model_for(const worldgen::Benchmark& b, std::uint64_t seed = 3) {
  auto m = agent::AgentModel::create(agent::ModelDims::desk(b.vocab.size(), b.params.features.feature_dim()), seed);
  testsupport::jitter(m.params(), seed + 1, 0.3);
  return m;
}

// Probabilities favoring the highest-id neighbor, i.e. "forward" along a corridor.
std::map<int, std::vector<double>> forward_probs(const worldgen::NavGraph& g) {
  std::map<int, std::vector<double>> out;
  for (int v = 0; v < g.size(); ++v) {
    std::vector<double> p(g.degree(v) + 1, 0.1);
    if (v + 1 < g.size()) p.back() = 0.8;
    else p[0] = 0.8;
    out[v] = p;
  }
  return out;
}

std::map<int, std::vector<double>> random_probs(const worldgen::NavGraph& g, Rng& rng) {
  std::map<int, std::vector<double>> out;
  for (int v = 0; v < g.size(); ++v) {
    std::vector<double> w(g.degree(v) + 1);
    for (auto& x : w) x = 0.05 + rng.uniform();
    out[v] = num::softmax_values(w);
  }
  return out;
}

}  // namespace

TEST_CASE("normalize_progress examples") {
  CHECK(normalize_progress(0.0) == 0.5);
  CHECK(normalize_progress(1.0 - 1e-12) == doctest::Approx(1.0));
  CHECK(normalize_progress(-1.0 + 1e-6) == doctest::Approx(0.5e-6).epsilon(1e-9));
}

TEST_CASE("greedy decoding follows a corridor") {
  const auto g = testsupport::corridor(5);
  ScriptedPolicy policy(g, forward_probs(g), {});
  const auto log = greedy_decode(policy, 0, 10);
  CHECK(log.visited == std::vector<int>{0, 1, 2, 3, 4});
  CHECK(log.stopped);
  CHECK(log.steps.size() == 5);
  CHECK(log.steps.back().action == 0);
}

TEST_CASE("greedy decoding stops at max steps") {
  const auto g = testsupport::corridor(8);
  ScriptedPolicy policy(g, forward_probs(g), {});
  const auto log = greedy_decode(policy, 0, 3);
  CHECK(log.visited == std::vector<int>{0, 1, 2, 3});
  CHECK_FALSE(log.stopped);
}

TEST_CASE("agent policy reproduces a direct agent rollout and is deterministic") {
  const auto b = small_bench();
  const auto m = model_for(b);
  for (const auto& ep : b.episodes) {
    const auto& g = b.world(ep.world_id);
    AgentPolicy p1(m, g, b.params.features, ep.instruction), p2(m, g, b.params.features, ep.instruction);
    const auto a = greedy_decode(p1, ep.start, 10), c = greedy_decode(p2, ep.start, 10);
    CHECK(a.visited == c.visited);
    CHECK(trajectory_to_jsonl(a) == trajectory_to_jsonl(c));

    num::Tape tape(&m.params());
    const auto enc = encoder::encode_instruction(tape, m.index().enc, m.dims().encoder(), ep.instruction);
    auto state = agent::initial_state(tape, m);
    int vp = ep.start;
    for (const auto& s : a.steps) {
      const auto obs = agent::observe(g, vp, b.params.features);
      agent::StepContext ctx;
      const auto r = agent::agent_step(tape, m, state, enc, obs, ctx);
      const auto probs = r.probs.value().values();
      CHECK(std::vector<double>(probs.begin(), probs.end()) == s.probs);
      CHECK(r.p_pm.item() == s.p_pm);
      if (s.action == 0) break;
      state = agent::advance(tape, m, r, s.action);
      vp = obs.targets[s.action];
    }
  }
}

TEST_CASE("progress inference equals greedy when progress never drops") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto g = testsupport::random_tiny_graph(6, rng, 3);
    const auto probs = random_probs(g, rng);
    std::map<int, double> flat;
    for (int v = 0; v < g.size(); ++v) flat[v] = 0.3;
    ScriptedPolicy a(g, probs, flat), b(g, probs, flat);
    const auto greedy = greedy_decode(a, 0, 8);
    const auto prog = progress_inference(b, 0, 8, 4);
    CHECK(prog.visited == greedy.visited);
    REQUIRE(prog.steps.size() == greedy.steps.size());
    for (std::size_t t = 0; t < prog.steps.size(); ++t) CHECK(prog.steps[t].action == greedy.steps[t].action);
  }
  const auto c = testsupport::corridor(5);
  std::map<int, double> rising;
  for (int v = 0; v < 5; ++v) rising[v] = -0.8 + 0.3 * v;
  ScriptedPolicy a(c, forward_probs(c), rising), b(c, forward_probs(c), rising);
  CHECK(progress_inference(a, 0, 10, 2).visited == greedy_decode(b, 0, 10).visited);
}

TEST_CASE("progress inference backtracks from a dropping branch") {
  // 0 forks to 1 (preferred, progress drops) and 2 (progress rises, then STOP).
  const auto g = testsupport::make_graph({{0, 0, 0}, {-2, 2, 0}, {2, 2, 0}}, {{0, 1}, {0, 2}});
  ScriptedPolicy p(g, {{0, {0.1, 0.6, 0.3}}, {1, {0.9, 0.1}}, {2, {0.9, 0.1}}}, {{0, 0.2}, {1, -0.5}, {2, 0.5}});
  const auto log = progress_inference(p, 0, 10, 2);
  CHECK(log.visited == std::vector<int>{0, 1, 0, 2});
  REQUIRE(log.steps.size() == 3);
  CHECK(log.steps[0].rejected);
  CHECK(log.steps[0].target == 1);
  CHECK(log.steps[1].target == 2);
  CHECK_FALSE(log.steps[1].rejected);
  CHECK(log.steps[2].action == 0);
  CHECK(log.stopped);
  CHECK(log.final_viewpoint() == 2);

  ScriptedPolicy greedy(g, {{0, {0.1, 0.6, 0.3}}, {1, {0.9, 0.1}}, {2, {0.9, 0.1}}}, {{0, 0.2}, {1, -0.5}, {2, 0.5}});
  CHECK(greedy_decode(greedy, 0, 10).final_viewpoint() == 1);
}

TEST_CASE("progress inference stops in place when every move drops") {
  const auto g = testsupport::make_graph({{0, 0, 0}, {-2, 2, 0}, {2, 2, 0}}, {{0, 1}, {0, 2}});
  ScriptedPolicy p(g, {{0, {0.1, 0.6, 0.3}}, {1, {0.9, 0.1}}, {2, {0.9, 0.1}}}, {{0, 0.5}, {1, -0.5}, {2, 0.0}});
  const auto log = progress_inference(p, 0, 10, 2);
  CHECK(log.visited == std::vector<int>{0, 1, 0, 2, 0});
  REQUIRE(log.steps.size() == 3);
  CHECK(log.steps[0].rejected);
  CHECK(log.steps[1].rejected);
  CHECK(log.steps[2].action == 0);
  CHECK(log.stopped);
  CHECK(log.final_viewpoint() == 0);
}

TEST_CASE("progress inference respects the expansion budget and emits walks") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto g = testsupport::random_tiny_graph(3 + static_cast<int>(rng.index(8)), rng, 4);
    const int max_steps = 1 + static_cast<int>(rng.index(10));
    MarkovStubPolicy stub(g, 100 + trial);
    const auto log = progress_inference(stub, 0, max_steps, g.max_degree());
    CHECK(stub.expansions() <= static_cast<std::size_t>(max_steps) * (g.max_degree() + 1));
    CHECK(g.is_walk(log.visited));
  }
}

TEST_CASE("beam search matches exhaustive enumeration") {
  Rng rng(3);
  int cases = 0;
  for (int trial = 0; cases < 30 && trial < 1000; ++trial) {
    const auto g = testsupport::random_tiny_graph(2 + static_cast<int>(rng.index(3)), rng, 1);
    const int horizon = 1 + static_cast<int>(rng.index(3));
    MarkovStubPolicy stub(g, 500 + trial);
    const bool pm = trial % 2 == 0;
    const auto oracle = testsupport::enumerate_trajectories(stub, 0, horizon, pm);
    if (oracle.trajectories > 50 || oracle.finished.empty()) continue;
    ++cases;
    BeamOptions opt;
    opt.beam_size = oracle.trajectories;
    opt.max_steps = horizon;
    opt.progress_score = pm;
    const auto r = beam_search(stub, 0, opt);
    const auto& best = testsupport::best_hypothesis(oracle.finished);
    CHECK(r.best.trajectory == best.trajectory);
    CHECK(r.best.actions == best.actions);
    CHECK(r.best.score == doctest::Approx(best.score).epsilon(1e-12));
    CHECK_FALSE(r.warning);
  }
  CHECK(cases == 30);
}

TEST_CASE("hypothesis scores accumulate log(p_pm * p_k)") {
  const auto g = testsupport::random_tiny_graph(5, *std::make_unique<Rng>(4), 2);
  MarkovStubPolicy stub(g, 9);
  BeamOptions opt;
  opt.beam_size = 4;
  opt.max_steps = 5;
  for (bool pm : {true, false}) {
    opt.progress_score = pm;
    const auto r = beam_search(stub, 0, opt);
    for (const auto& h : r.retained) {
      double s = 0.0;
      for (const auto& [p, prog] : h.records) s += std::log((pm ? normalize_progress(prog) : 1.0) * p);
      CHECK(h.score == doctest::Approx(s).epsilon(1e-12));
    }
  }
}

TEST_CASE("beam of size one is greedy decoding") {
  const auto b = small_bench();
  int compared = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto m = model_for(b, 50 + seed);
    for (const auto& ep : b.episodes) {
      const auto& g = b.world(ep.world_id);
      AgentPolicy p1(m, g, b.params.features, ep.instruction), p2(m, g, b.params.features, ep.instruction);
      BeamOptions opt;
      opt.beam_size = 1;
      opt.max_steps = 10;
      const auto beam = beam_search(p1, ep.start, opt);
      const auto greedy = greedy_decode(p2, ep.start, 10);
      std::vector<std::size_t> actions;
      for (const auto& s : greedy.steps) actions.push_back(s.action);
      CHECK(beam.best.trajectory == greedy.visited);
      CHECK(beam.best.actions == actions);
      ++compared;
    }
  }
  CHECK(compared == 10 * static_cast<int>(b.episodes.size()));
}

TEST_CASE("beam without progress scoring ranks by action log-probability only") {
  // Two equally likely branches; only the progress estimate tells them apart.
  const auto g = testsupport::make_graph({{0, 0, 0}, {-2, 2, 0}, {2, 2, 0}}, {{0, 1}, {0, 2}});
  const std::map<int, std::vector<double>> probs{{0, {0.0, 0.5, 0.5}}, {1, {0.6, 0.4}}, {2, {0.6, 0.4}}};
  ScriptedPolicy a(g, probs, {{0, 0.0}, {1, -0.8}, {2, 0.8}}), c(g, probs, {{0, 0.0}, {1, -0.8}, {2, 0.8}});
  BeamOptions opt;
  opt.beam_size = 3;
  opt.max_steps = 3;
  opt.progress_score = false;
  CHECK(beam_search(a, 0, opt).best.viewpoint() == 1);  // tie broken by lower id
  opt.progress_score = true;
  CHECK(beam_search(c, 0, opt).best.viewpoint() == 2);
}

TEST_CASE("state-factored beam never holds two hypotheses at one viewpoint") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto g = testsupport::random_tiny_graph(4 + static_cast<int>(rng.index(6)), rng, 5);
    MarkovStubPolicy stub(g, 900 + trial);
    BeamOptions opt;
    opt.beam_size = 1 + rng.index(6);
    opt.max_steps = 6;
    opt.state_factored = true;
    const auto r = beam_search(stub, 0, opt);
    std::map<std::size_t, std::set<int>> by_depth;
    for (const auto& h : r.retained)
      if (!h.finished) CHECK(by_depth[h.actions.size()].insert(h.viewpoint()).second);
  }
}

TEST_CASE("beam selection dominates every retained finished hypothesis") {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const auto g = testsupport::random_tiny_graph(3 + static_cast<int>(rng.index(7)), rng, 3);
    MarkovStubPolicy stub(g, 1300 + trial);
    BeamOptions opt;
    opt.beam_size = 1 + rng.index(5);
    opt.max_steps = 1 + static_cast<int>(rng.index(8));
    const auto r = beam_search(stub, 0, opt);
    for (const auto& h : r.retained)
      if (h.finished) CHECK(r.best.score >= h.score);
    CHECK(r.best.trajectory.front() == 0);
    CHECK(g.is_walk(r.best.trajectory));
    if (r.warning) CHECK_FALSE(r.best.finished);
  }
  const auto g = testsupport::corridor(3);
  MarkovStubPolicy stub(g, 1);
  BeamOptions bad;
  bad.beam_size = 0;
  CHECK_THROWS_AS(beam_search(stub, 0, bad), ConfigError);
}

TEST_CASE("beam reports a warning when nothing finishes") {
  const auto g = testsupport::corridor(6);
  ScriptedPolicy p(g, forward_probs(g), {});
  BeamOptions opt;
  opt.beam_size = 1;
  opt.max_steps = 2;
  const auto r = beam_search(p, 0, opt);
  CHECK(r.warning);
  CHECK(r.best.trajectory == std::vector<int>{0, 1, 2});
}

TEST_CASE("stitching a single hypothesis returns its trajectory") {
  const auto g = testsupport::corridor(4);
  Hypothesis h;
  h.trajectory = {0, 1, 2, 3};
  CHECK(stitch_full_trajectory({h}, h, g) == h.trajectory);
  CHECK(stitch_full_trajectory({}, h, g) == h.trajectory);
}

TEST_CASE("stitching a fork visits the other branch first") {
  // 0 - 1 forks into 2 - 3 and 4.
  const auto g = testsupport::make_graph({{0, 0, 0}, {0, 2, 0}, {-2, 4, 0}, {-2, 6, 0}, {2, 4, 0}},
                                         {{0, 1}, {1, 2}, {2, 3}, {1, 4}});
  Hypothesis a, b;
  a.trajectory = {0, 1, 2, 3};
  b.trajectory = {0, 1, 4};
  CHECK(stitch_full_trajectory({a, b}, b, g) == std::vector<int>{0, 1, 2, 3, 2, 1, 4});
  CHECK(stitch_full_trajectory({b, a}, a, g) == std::vector<int>{0, 1, 4, 1, 2, 3});
  Hypothesis stray;
  stray.trajectory = {1, 2};
  CHECK_THROWS_AS(stitch_full_trajectory({a, stray}, b, g), ContractError);
}

TEST_CASE("stitched walks are valid, cover every retained viewpoint and end with the selection") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const auto g = testsupport::random_tiny_graph(4 + static_cast<int>(rng.index(8)), rng, 4);
    MarkovStubPolicy stub(g, 2000 + trial);
    BeamOptions opt;
    opt.beam_size = 1 + rng.index(6);
    opt.max_steps = 1 + static_cast<int>(rng.index(8));
    opt.state_factored = trial % 2 == 1;
    const auto r = beam_search(stub, 0, opt);
    const auto walk = stitch_full_trajectory(r.retained, r.best, g);
    CHECK(g.is_walk(walk));
    CHECK(walk.back() == r.best.viewpoint());
    const std::set<int> covered(walk.begin(), walk.end());
    for (const auto& h : r.retained)
      for (int v : h.trajectory) CHECK(covered.count(v) == 1);
    CHECK(g.walk_length(walk) >= g.walk_length(r.best.trajectory) - 1e-12);
  }
}

TEST_CASE("decode_episode logs are walks ending at the reported viewpoint") {
  const auto b = small_bench();
  const auto m = model_for(b);
  for (auto mode : {Mode::greedy, Mode::progress, Mode::beam}) {
    DecodeOptions opt;
    opt.mode = mode;
    for (const auto& ep : b.episodes) {
      const auto& g = b.world(ep.world_id);
      const auto r = decode_episode(m, b, ep, opt);
      CHECK(g.is_walk(r.log.visited));
      CHECK(r.log.visited.front() == ep.start);
      CHECK(r.log.final_ne == g.distance(r.log.final_viewpoint(), ep.goal));
      CHECK(r.log.episode_id == ep.id);
      if (mode == Mode::beam) {
        CHECK(r.stitched.back() == r.log.final_viewpoint());
        CHECK(g.is_walk(r.stitched));
      } else {
        CHECK(r.stitched.empty());
      }
    }
  }
}

TEST_CASE("trajectory records carry the exported fields") {
  const auto b = small_bench();
  const auto m = model_for(b);
  const auto r = decode_episode(m, b, b.episodes.front(), {});
  const auto text = trajectory_to_jsonl(r.log);
  std::size_t lines = 0, pos = 0;
  while ((pos = text.find('\n', pos)) != std::string::npos) ++lines, ++pos;
  CHECK(lines == r.log.steps.size());
  const auto first = nlohmann::json::parse(text.substr(0, text.find('\n')));
  for (const char* key : {"t", "viewpoint", "action", "p", "alpha", "beta", "p_pm"}) CHECK(first.contains(key));
  CHECK(to_string(mode_from_string("beam")) == "beam");
  CHECK_THROWS_AS(mode_from_string("astar"), ConfigError);
}
