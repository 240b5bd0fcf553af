#include <benchmark/benchmark.h>

#include "lensless/optics.hpp"
#include "lensless/recon.hpp"
#include "lensless/rng.hpp"
#include "lensless/sensor.hpp"
#include "lensless/wavelet.hpp"

using namespace lensless;

namespace {

Tensor random_image(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x({3, n, n});
  for (double& v : x.data()) v = rng.uniform();
  return x;
}

}  // namespace

static void BM_ConvolveFft(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_image(n, 1);
  const Psf psf = random_mask_psf(n / 4 + 1, 0.3, 2);
  for (auto _ : state) benchmark::DoNotOptimize(convolve_fft(x, psf));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_ConvolveFft)->RangeMultiplier(2)->Range(32, 256)->Unit(benchmark::kMicrosecond)->Complexity();

static void BM_Wiener(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Psf psf = random_mask_psf(n / 4 + 1, 0.3, 2);
  const Tensor b = convolve_fft(random_image(n, 3), psf);
  WienerConfig w;
  w.lambda = 0.1;
  for (auto _ : state) benchmark::DoNotOptimize(wiener_deconv(b, psf, w));
}
BENCHMARK(BM_Wiener)->RangeMultiplier(2)->Range(32, 256)->Unit(benchmark::kMicrosecond);

static void BM_Admm(benchmark::State& state) {
  const Psf psf = gaussian_psf(5, 0.8);
  const Tensor b = convolve_fft(random_image(32, 4), psf);
  AdmmConfig cfg;
  cfg.prior = state.range(0) ? AdmmPrior::TotalVariation : AdmmPrior::Nonnegativity;
  for (auto _ : state) benchmark::DoNotOptimize(admm_reconstruct(b, psf, cfg));
}
BENCHMARK(BM_Admm)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

static void BM_Dwt2Multi(benchmark::State& state) {
  const Tensor x = random_image(static_cast<std::size_t>(state.range(0)), 5);
  for (auto _ : state) {
    const WaveletPyramid p = dwt2_multi(x, 2);
    benchmark::DoNotOptimize(idwt2_multi(p));
  }
  state.SetBytesProcessed(static_cast<int64_t>(state.iterations() * x.size() * sizeof(double)));
}
BENCHMARK(BM_Dwt2Multi)->RangeMultiplier(4)->Range(16, 256)->Unit(benchmark::kMicrosecond);

static void BM_SimulateCapture(benchmark::State& state) {
  const Tensor x = random_image(static_cast<std::size_t>(state.range(0)), 6);
  const SensorParams p;
  Rng rng(7);
  for (auto _ : state) benchmark::DoNotOptimize(simulate_capture(x, p, rng));
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * x.size()));
}
BENCHMARK(BM_SimulateCapture)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
