#include <benchmark/benchmark.h>

#include "cag/experiment.hpp"
#include "cag/objectives.hpp"

using namespace cag;

namespace {

ExperimentConfig bench_config() {
  auto cfg = parse_config(R"({"seed": 1, "data": {"height": 8, "width": 8,
                                 "source_count": 32, "target_train_count": 32,
                                 "target_eval_count": 8}})");
  cfg.data.target = {0.35, 1.0, 0.6, {}, {}};
  cfg.data.source.noise_sigma = 0.6;
  return cfg;
}

const DomainData& bench_data() {
  static const DomainData data = generate_data(bench_config());
  return data;
}

void BM_Forward(benchmark::State& state) {
  const auto model = initial_model(bench_config());
  const auto& grid = bench_data().source.grids[0];
  NoGradScope no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(grid).probabilities.values().data());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(grid.pixels()));
}
BENCHMARK(BM_Forward);

void BM_ForwardBackward(benchmark::State& state) {
  const auto model = initial_model(bench_config());
  const auto& grid = bench_data().source.grids[0];
  for (auto _ : state) {
    Tape tape;
    const auto out = model.forward(grid);
    tape.backward(ce_loss(out.probabilities, *grid.labels));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(grid.pixels()));
}
BENCHMARK(BM_ForwardBackward);

void BM_BeginStage(benchmark::State& state) {
  const auto cfg = bench_config();
  const auto model = initial_model(cfg);
  const UnlabeledDataset target(bench_data().target_train);
  for (auto _ : state) {
    auto s = begin_stage(model, bench_data().source, target, cfg.train, 1);
    benchmark::DoNotOptimize(s.anchors().anchors.data());
  }
}
BENCHMARK(BM_BeginStage)->Unit(benchmark::kMillisecond);

void BM_AdaptIteration(benchmark::State& state) {
  auto cfg = bench_config();
  cfg.train.iterations_per_stage = 1;
  cfg.train.stages = 1;
  const auto model = initial_model(cfg);
  const UnlabeledDataset target(bench_data().target_train);
  const auto base = begin_stage(model, bench_data().source, target, cfg.train, 1);
  for (auto _ : state) {
    state.PauseTiming();
    StageState s(base.frozen(), base.model().clone(), base.momentum());
    state.ResumeTiming();
    benchmark::DoNotOptimize(run_stage(s, bench_data().source, target, cfg.train));
  }
}
BENCHMARK(BM_AdaptIteration);

}  // namespace
BENCHMARK_MAIN();
