#include <benchmark/benchmark.h>

#include <filesystem>

#include "tg3d/renderer.hpp"
#include "tg3d/training.hpp"

using namespace tg3d;

static void BM_Composite(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(1);
  std::vector<double> dens(n), feat(n), delta(n, 2.0 / n), depth(n);
  for (int i = 0; i < n; ++i) {
    dens[i] = std::abs(rng.normal());
    feat[i] = rng.uniform();
    depth[i] = 1.7 + (i + 0.5) * 2.0 / n;
  }
  for (auto _ : state) benchmark::DoNotOptimize(composite(dens, feat, delta, depth));
}
BENCHMARK(BM_Composite)->Arg(48)->Arg(256);

static void BM_SampleTriplanes(benchmark::State& state) {
  const int p = static_cast<int>(state.range(0));
  Rng rng(2);
  Tensor planes = Tensor::from({1, 3, 32, 64, 64}, rng.normal_vector(3 * 32 * 64 * 64));
  std::vector<double> pts(static_cast<size_t>(p) * 3);
  for (auto& v : pts) v = rng.uniform() * 2 - 1;
  Tensor points = Tensor::from({1, p, 3}, pts);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(sample_triplanes(planes, points));
  state.SetItemsProcessed(state.iterations() * p);
}
BENCHMARK(BM_SampleTriplanes)->Arg(1024)->Arg(16384);

static void BM_GeneratorForward(benchmark::State& state) {
  const int res = static_cast<int>(state.range(0));
  TrainConfig cfg;
  Rng rng(3);
  Generator g(cfg.generator, rng);
  HashedTextEncoder enc(cfg.generator.text_dim, 0);
  const auto z = rng.normal_vector(static_cast<size_t>(cfg.generator.z_dim));
  const auto e = enc.encode("a face with red hair");
  const auto cam = cfg.poses.canonical();
  NoGradGuard ng;
  for (auto _ : state)
    benchmark::DoNotOptimize(g.forward(Tensor::from({1, cfg.generator.z_dim}, z), Tensor::from({1, e.dim()}, e.values),
                                       std::span(&cam, 1), res));
}
BENCHMARK(BM_GeneratorForward)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

static void BM_TrainStep(benchmark::State& state) {
  const auto dir = std::filesystem::temp_directory_path() / "tg3d_bench_data";
  std::filesystem::remove_all(dir);
  synthesize_toy_dataset(32, 1, dir);
  const Dataset data = load_images(load_dataset(dir));
  TrainConfig cfg;
  Trainer t(cfg);
  Rng rng(4);
  for (auto _ : state) {
    state.PauseTiming();
    const auto batch = sample_batch(data, cfg.batch, cfg.generator.z_dim, rng);
    state.ResumeTiming();
    benchmark::DoNotOptimize(t.step(batch));
  }
  std::filesystem::remove_all(dir);
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond)->Iterations(3);
BENCHMARK_MAIN();
