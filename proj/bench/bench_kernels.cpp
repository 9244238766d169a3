// Serial against OpenMP versions of the batch kernels.
#include <benchmark/benchmark.h>

#include "epsad/harness.hpp"
#include "epsad/kernels.hpp"

using namespace epsad;

namespace {

std::vector<Vec> points(std::size_t n, int d) {
  Rng rng(1);
  std::vector<Vec> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(rng.normal_vector(d));
  return out;
}

const ScoreSource& learned_score() {
  static const ScoreSource src = [] {
    auto net = std::make_shared<ScoreNet>(8);
    Rng rng(2);
    net->init(rng);
    return ScoreSource::learned(net, NoiseSchedule{});
  }();
  return src;
}

template <bool Parallel>
void BM_Eps(benchmark::State& state) {
  const auto xs = points(static_cast<std::size_t>(state.range(0)), 8);
  for (auto _ : state) {
    auto r = Parallel ? eps_batch_parallel(learned_score(), xs, TimeGrid{}, {0, 1})
                      : eps_batch_serial(learned_score(), xs, TimeGrid{}, {0, 1});
    benchmark::DoNotOptimize(r);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <bool Parallel>
void BM_Mmd(benchmark::State& state) {
  const auto refs = points(1000, 8);
  const auto tests = points(static_cast<std::size_t>(state.range(0)), 8);
  const MmdReference ref(GaussianKernel{median_heuristic(refs)}, refs);
  for (auto _ : state) {
    auto r = Parallel ? mmd_statistics_parallel(ref, tests) : mmd_statistics_serial(ref, tests);
    benchmark::DoNotOptimize(r);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <bool Parallel>
void BM_Attack(benchmark::State& state) {
  ClassWorld w;
  w.means = {Vec::Zero(8), Vec::Ones(8)};
  w.stds = {Vec::Ones(8), Vec::Ones(8)};
  Rng rng(3);
  const auto data = generate_world_data(w, static_cast<std::size_t>(state.range(0)), rng);
  ToyClassifier clf(8, 2, {64, 64});
  clf.net().init(rng);
  AttackConfig cfg;
  cfg.steps = 10;
  for (auto _ : state) {
    auto r = Parallel ? attack_batch_parallel(clf, data.x, data.y, cfg, {0, 1})
                      : attack_batch_serial(clf, data.x, data.y, cfg, {0, 1});
    benchmark::DoNotOptimize(r);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_Eps<false>)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Eps<true>)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Mmd<false>)->Arg(1000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Mmd<true>)->Arg(1000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Attack<false>)->Arg(1000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Attack<true>)->Arg(1000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
