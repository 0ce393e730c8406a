#include <benchmark/benchmark.h>

#include "cpl/analysis.hpp"
#include "cpl/kernels.hpp"
#include "cpl/rng.hpp"
#include "cpl/spm.hpp"
#include "cpl/synth.hpp"
#include "cpl/trainer.hpp"

namespace {

using namespace cpl;

Tensor random_tensor(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(shape, 0.0);
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

void BM_Conv2d(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto size = static_cast<std::size_t>(state.range(1));
  const Tensor in = random_tensor({c, size, size}, 1);
  const Tensor k = random_tensor({c, c, 3, 3}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::conv2d(in, k, nullptr, 1, kernels::Padding::kSame));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(c * c * 9 * size * size));
}
BENCHMARK(BM_Conv2d)->Args({8, 32})->Args({16, 32})->Args({32, 16});

void BM_GateDecide(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor z = random_tensor({n}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(decide(z, 1));
}
BENCHMARK(BM_GateDecide)->Arg(5)->Arg(16);

void BM_Restore(benchmark::State& state) {
  ModelConfig c;
  c.backbone.base_channels = static_cast<std::size_t>(state.range(0));
  const CplModel model(c);
  const Tensor image = gen_clean(4, 32);
  for (auto _ : state) benchmark::DoNotOptimize(model.restore(image));
}
BENCHMARK(BM_Restore)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  TrainConfig cfg;
  cfg.tasks = {Task::kNoise, Task::kRain, Task::kLowlight};
  cfg.backbone.base_channels = 8;
  cfg.top_k = static_cast<std::size_t>(state.range(0));
  cfg.negatives = static_cast<std::size_t>(state.range(1));
  cfg.alpha = cfg.negatives > 0 ? 0.01 : 0.0;
  TrainState train(cfg);
  const auto batch = make_batch(cfg.tasks, cfg.batch_size, cfg.crop, 5, cfg.batch_options());
  for (auto _ : state) benchmark::DoNotOptimize(train_step(train, batch, 6));
}
BENCHMARK(BM_TrainStep)->Args({1, 4})->Args({5, 0})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
