// OpenMP kernels against their serial references.

#include <benchmark/benchmark.h>
#include <omp.h>

#include "diffstack/training.hpp"

using namespace diffstack;

namespace {

const Benchmark& d2() {
  static const Benchmark b = build_benchmark(BenchmarkSpec::standard(GrammarId::D2, 7).scaled(0.3));
  return b;
}

Model trained_shape_model() {
  Rng rng(3);
  return Model{ModelParams::init(Family::DiffStkMRNN, {d2().alphabet.size(), 8, 3}, rng), {}};
}

void BM_EvaluateSerial(benchmark::State& state) {
  const Model m = trained_shape_model();
  const DatasetSplit& test = d2().split("test");
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_split_serial(m, test));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(test.size()));
}

void BM_EvaluateParallel(benchmark::State& state) {
  omp_set_num_threads(static_cast<int>(state.range(0)));
  const Model m = trained_shape_model();
  const DatasetSplit& test = d2().split("test");
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_split(m, test));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(test.size()));
}

TrainConfig small_trials() {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.trials = 4;
  cfg.seed = 1;
  return cfg;
}

TrialData data() {
  const Benchmark& b = d2();
  return {&b.split("train"), &b.split("valid"), &b.split("test"), nullptr, b.alphabet.size(), b.alphabet.eos()};
}

void BM_TrialsSerial(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(run_trials_serial(Family::DiffStkRNN, data(), small_trials()));
}

void BM_TrialsParallel(benchmark::State& state) {
  omp_set_num_threads(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(run_trials(Family::DiffStkRNN, data(), small_trials()));
}

}  // namespace

BENCHMARK(BM_EvaluateSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EvaluateParallel)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TrialsSerial)->Unit(benchmark::kMillisecond)->Iterations(1);
BENCHMARK(BM_TrialsParallel)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond)->Iterations(1);

BENCHMARK_MAIN();
