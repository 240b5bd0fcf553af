#include <benchmark/benchmark.h>

#include <vector>

#include "lensless/autodiff.hpp"
#include "lensless/diffusion.hpp"
#include "lensless/enhance.hpp"
#include "lensless/networks.hpp"
#include "lensless/rng.hpp"

using namespace lensless;

static void BM_Conv2dForwardBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor input = rng.normal_tensor({4, c, 16, 16});
  const Tensor kernel = rng.normal_tensor({c, c, 3, 3});
  for (auto _ : state) {
    Tape tape;
    const Var x = tape.leaf(input), k = tape.leaf(kernel);
    const Var loss = ad::mean(ad::square(ad::conv2d(x, k, 1, 1)));
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.grad(k));
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(4)->Arg(16)->Unit(benchmark::kMicrosecond);

static void BM_CrossAttention(benchmark::State& state) {
  const auto l = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const Tensor q = rng.normal_tensor({l, 16}), k = rng.normal_tensor({l, 16}), v = rng.normal_tensor({l, 16});
  for (auto _ : state) {
    Tape tape;
    const Var out = ad::cross_attention(tape.leaf(q), tape.leaf(k), tape.leaf(v));
    tape.backward(ad::sum(out));
    benchmark::DoNotOptimize(tape.size());
  }
}
BENCHMARK(BM_CrossAttention)->Arg(16)->Arg(64)->Unit(benchmark::kMicrosecond);

static void BM_EpsNetForward(benchmark::State& state) {
  EpsNetConfig cfg;
  cfg.hidden = static_cast<std::size_t>(state.range(0));
  cfg.max_window = 4;
  Rng rng(3);
  const NoisePredictor f = bind_predictor(
      [cfg](const BoundParams& p, Var x, Var c, std::span<const std::size_t> t) {
        return eps_net_forward(cfg, p, x, c, t);
      },
      init_eps_net(cfg, rng));
  const Tensor x = rng.normal_tensor({3, 4, 4}), cond = rng.normal_tensor({3, 4, 4});
  for (auto _ : state) benchmark::DoNotOptimize(f(x, cond, 100));
}
BENCHMARK(BM_EpsNetForward)->Arg(16)->Arg(32)->Unit(benchmark::kMicrosecond);

static void BM_Stage2Apply(benchmark::State& state) {
  Stage2Config cfg;
  cfg.hf_levels = {1, 2};
  cfg.eps.hidden = 16;
  cfg.eps.max_window = 4;
  const Stage2Model model = init_stage2(cfg, 4);
  Rng rng(5);
  Tensor x({3, 16, 16});
  for (double& v : x.data()) v = rng.uniform();
  for (auto _ : state) benchmark::DoNotOptimize(stage2(x, model));
}
BENCHMARK(BM_Stage2Apply)->Unit(benchmark::kMillisecond);

static void BM_Stage2TrainStep(benchmark::State& state) {
  Stage2Config cfg;
  cfg.hf_levels = {1, 2};
  cfg.eps.hidden = 16;
  cfg.eps.max_window = 4;
  Rng rng(6);
  std::vector<Stage2Example> data;
  for (int i = 0; i < 8; ++i) {
    Tensor a({3, 16, 16}), b({3, 16, 16});
    for (double& v : a.data()) v = rng.uniform();
    for (double& v : b.data()) v = rng.uniform();
    data.push_back({a, b});
  }
  Stage2TrainConfig tc;
  tc.steps = 10;
  tc.recon_every = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(train_stage2(init_stage2(cfg, 7), data, tc));
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * tc.steps));
}
BENCHMARK(BM_Stage2TrainStep)->Arg(0)->Arg(10)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
