#include <benchmark/benchmark.h>

#include <vector>

#include "selfmon/metrics.hpp"
#include "selfmon/training.hpp"

using namespace selfmon;

namespace {

const worldgen::Benchmark& bench_data() {
  static const auto b = [] {
    auto p = worldgen::benchmark_preset("desk");
    p.train_worlds = 8;
    p.episodes_per_train_world = 4;
    p.val_seen_worlds = 4;
    p.episodes_per_val_seen_world = 4;
    p.val_unseen_worlds = 4;
    p.episodes_per_unseen_world = 8;
    return worldgen::generate_benchmark(7, p);
  }();
  return b;
}

const agent::AgentModel& model() {
  static const auto m = agent::AgentModel::create(
      agent::ModelDims::desk(bench_data().vocab.size(), bench_data().params.features.feature_dim()), 3);
  return m;
}

struct Batch {
  std::vector<const worldgen::Episode*> episodes;
  std::vector<std::uint64_t> seeds;
};

Batch batch(std::size_t n) {
  Batch b;
  const auto train = bench_data().split(worldgen::Split::train);
  for (std::size_t i = 0; i < n; ++i) {
    b.episodes.push_back(train[i % train.size()]);
    b.seeds.push_back(100 + i);
  }
  return b;
}

void BM_BatchGradientSerial(benchmark::State& state) {
  const auto b = batch(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state)
    benchmark::DoNotOptimize(training::batch_gradient_serial(model(), bench_data(), b.episodes, b.seeds,
                                                             training::RolloutMode::sample, {}));
}

void BM_BatchGradientParallel(benchmark::State& state) {
  const auto b = batch(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state)
    benchmark::DoNotOptimize(training::batch_gradient_parallel(model(), bench_data(), b.episodes, b.seeds,
                                                               training::RolloutMode::sample, {},
                                                               static_cast<int>(state.range(1))));
}

void BM_EvaluateSplitSerial(benchmark::State& state) {
  inference::DecodeOptions opt;
  opt.mode = static_cast<inference::Mode>(state.range(0));
  for (auto _ : state)
    benchmark::DoNotOptimize(metrics::evaluate_split_serial(model(), bench_data(), worldgen::Split::val_unseen, opt));
}

void BM_EvaluateSplitParallel(benchmark::State& state) {
  inference::DecodeOptions opt;
  opt.mode = static_cast<inference::Mode>(state.range(0));
  for (auto _ : state)
    benchmark::DoNotOptimize(metrics::evaluate_split_parallel(model(), bench_data(), worldgen::Split::val_unseen, opt,
                                                              static_cast<int>(state.range(1))));
}

void BM_RandomPolicySerial(benchmark::State& state) {
  for (auto _ : state)
    benchmark::DoNotOptimize(
        metrics::random_policy_success_serial(bench_data(), worldgen::Split::val_unseen, 10000, 10, 1));
}

void BM_RandomPolicyParallel(benchmark::State& state) {
  for (auto _ : state)
    benchmark::DoNotOptimize(metrics::random_policy_success_parallel(bench_data(), worldgen::Split::val_unseen, 10000,
                                                                     10, 1, static_cast<int>(state.range(0))));
}

}  // namespace

BENCHMARK(BM_BatchGradientSerial)->Arg(8)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_BatchGradientParallel)->Args({8, 2})->Args({8, 4})->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_EvaluateSplitSerial)->Arg(0)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_EvaluateSplitParallel)->Args({0, 2})->Args({2, 2})->Args({0, 4})->Args({2, 4})->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_RandomPolicySerial)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_RandomPolicyParallel)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
