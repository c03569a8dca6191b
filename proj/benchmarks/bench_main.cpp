#include <benchmark/benchmark.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "ctf/attnmask.hpp"
#include "ctf/data.hpp"
#include "ctf/model.hpp"
#include "ctf/patching.hpp"
#include "ctf/rng.hpp"
#include "ctf/spectral.hpp"
#include "ctf/train.hpp"

using namespace ctf;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(n);
  for (auto& v : x) v = standard_normal(rng);
  return x;
}

void BM_Fft(benchmark::State& state) {
  const auto x = noise(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(spectral::fft(x));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Fft)->RangeMultiplier(4)->Range(64, 16384)->Complexity(benchmark::oNLogN);

void BM_NaiveDft(benchmark::State& state) {
  const auto x = noise(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(spectral::naive_dft(x));
}
BENCHMARK(BM_NaiveDft)->RangeMultiplier(4)->Range(64, 1024);

void BM_BuildMask(benchmark::State& state) {
  const std::size_t channels = static_cast<std::size_t>(state.range(0));
  TokenLayout layout(std::vector<std::size_t>(channels, 8), 2);
  std::vector<std::uint8_t> vis(layout.total_local(), 1);
  const auto strategy = static_cast<attnmask::MaskStrategy>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(attnmask::build_mask(layout, strategy, vis));
  state.SetLabel(attnmask::strategy_name(strategy));
}
BENCHMARK(BM_BuildMask)->ArgsProduct({{3, 7, 21}, {0, 2, 5}});

struct Fixture {
  model::ModelConfig cfg;
  data::AsyncDataset ds;
  PatchPlan plan;
  model::ModelParams params;
  data::WindowSample window;

  Fixture() {
    const std::size_t f[] = {1, 1, 4};
    ds = data::synth_coupled(3, 2000, f, 0.8, 0.3, 0);
    plan = patching::plan_for_dataset(ds, cfg.input_length, cfg.plan_options());
    params = model::init_params(cfg, plan, ds.factors(), 0);
    data::WindowOptions wo{cfg.input_length, cfg.horizon, 8, true};
    window = data::make_windows(ds, data::Split::train, wo).front();
  }
};

void BM_Forward(benchmark::State& state) {
  Fixture fx;
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(model::forward(fx.window, fx.params, fx.cfg, fx.plan));
}
BENCHMARK(BM_Forward)->Unit(benchmark::kMicrosecond);

void BM_ForwardBackward(benchmark::State& state) {
  Fixture fx;
  train::Series targets;
  for (const auto& c : fx.window.channels) targets.push_back(c.target);
  for (auto _ : state) {
    auto out = model::forward(fx.window, fx.params, fx.cfg, fx.plan);
    backward(train::cmse(out.predictions, targets));
  }
}
BENCHMARK(BM_ForwardBackward)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
