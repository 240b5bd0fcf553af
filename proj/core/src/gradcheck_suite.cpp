#include "lensless/gradcheck_suite.hpp"

#include <cmath>
#include <functional>

#include "lensless/autodiff.hpp"
#include "lensless/diffusion.hpp"
#include "lensless/enhance.hpp"
#include "lensless/metrics.hpp"
#include "lensless/networks.hpp"
#include "lensless/rng.hpp"
#include "lensless/wavelet.hpp"

namespace lensless {
namespace {

using Build = std::function<Var(Tape&, std::span<const Var>)>;

Tensor uniform(Rng& rng, const Shape& shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape, 0.0);
  for (double& v : t.data()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

// Values bounded away from zero, for ops with a kink there.
Tensor away_from_zero(Rng& rng, const Shape& shape) {
  Tensor t = uniform(rng, shape);
  for (double& v : t.data()) v = (v < 0 ? -1.0 : 1.0) * (0.1 + 0.9 * std::abs(v));
  return t;
}

// Reduces any output to a scalar with fixed random weights so that every
// output coordinate contributes to the checked gradient.
Var project(Var y, std::uint64_t seed) {
  Rng rng(seed);
  return ad::sum(ad::mul(y, y.tape()->constant(uniform(rng, y.value().shape()))));
}

ParamSet randomized(const ParamSet& p, Rng& rng, double scale) {
  ParamSet out = p;
  for (auto& [_, t] : out.entries()) t = uniform(rng, t.shape(), -scale, scale);
  return out;
}

// Appends a ParamSet's tensors to the checked inputs.
std::vector<Tensor> with_params(std::vector<Tensor> inputs, const ParamSet& p) {
  for (const auto& [_, t] : p.entries()) inputs.push_back(t);
  return inputs;
}

// Binds the names of `layout` to gradcheck inputs starting at `first`.
BoundParams bind_inputs(Tape& tape, const ParamSet& layout, std::span<const Var> vars, std::size_t first) {
  std::vector<std::pair<std::string, Var>> named;
  std::size_t i = first;
  for (const auto& [name, _] : layout.entries()) named.emplace_back(name, vars[i++]);
  return BoundParams(tape, std::move(named));
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(double tolerance, double h, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradCheckResult> results;
  auto check = [&](const std::string& name, const Build& build, const std::vector<Tensor>& inputs) {
    const GradCheckReport r = gradcheck(build, inputs, h);
    results.push_back({name, r.max_rel_error, r.coordinates, r.max_rel_error < tolerance});
  };
  const std::uint64_t w = seed * 1000;

  check("add", [&](Tape&, std::span<const Var> v) { return project(ad::add(v[0], v[1]), w + 1); },
        {uniform(rng, {2, 3}), uniform(rng, {2, 3})});
  check("sub", [&](Tape&, std::span<const Var> v) { return project(ad::sub(v[0], v[1]), w + 2); },
        {uniform(rng, {2, 3}), uniform(rng, {2, 3})});
  check("mul", [&](Tape&, std::span<const Var> v) { return project(ad::mul(v[0], v[1]), w + 3); },
        {uniform(rng, {2, 3}), uniform(rng, {2, 3})});
  check("div", [&](Tape&, std::span<const Var> v) { return project(ad::div(v[0], v[1]), w + 4); },
        {uniform(rng, {2, 3}), uniform(rng, {2, 3}, 0.5, 1.5)});
  check("scale", [&](Tape&, std::span<const Var> v) { return project(ad::scale(v[0], -1.7), w + 5); },
        {uniform(rng, {4})});
  check("add_scalar", [&](Tape&, std::span<const Var> v) { return project(ad::add_scalar(v[0], 0.3), w + 6); },
        {uniform(rng, {4})});
  check("square", [&](Tape&, std::span<const Var> v) { return project(ad::square(v[0]), w + 7); },
        {uniform(rng, {5})});
  check("abs", [&](Tape&, std::span<const Var> v) { return project(ad::abs(v[0]), w + 8); },
        {away_from_zero(rng, {6})});
  check("relu", [&](Tape&, std::span<const Var> v) { return project(ad::relu(v[0]), w + 9); },
        {away_from_zero(rng, {6})});
  check("silu", [&](Tape&, std::span<const Var> v) { return project(ad::silu(v[0]), w + 10); },
        {uniform(rng, {6}, -3.0, 3.0)});
  check("sum", [&](Tape&, std::span<const Var> v) { return ad::sum(v[0]); }, {uniform(rng, {3, 2})});
  check("mean", [&](Tape&, std::span<const Var> v) { return ad::mean(v[0]); }, {uniform(rng, {3, 2})});
  check("matmul", [&](Tape&, std::span<const Var> v) { return project(ad::matmul(v[0], v[1]), w + 11); },
        {uniform(rng, {3, 4}), uniform(rng, {4, 2})});
  check("matmul_batched", [&](Tape&, std::span<const Var> v) { return project(ad::matmul(v[0], v[1]), w + 12); },
        {uniform(rng, {2, 3, 4}), uniform(rng, {4, 2})});
  check("conv2d", [&](Tape&, std::span<const Var> v) { return project(ad::conv2d(v[0], v[1], 1, 1), w + 13); },
        {uniform(rng, {1, 2, 5, 5}), uniform(rng, {3, 2, 3, 3})});
  check("conv2d_stride2", [&](Tape&, std::span<const Var> v) { return project(ad::conv2d(v[0], v[1], 2, 0), w + 14); },
        {uniform(rng, {2, 1, 6, 6}), uniform(rng, {2, 1, 2, 2})});
  check("depthwise_conv2d",
        [&](Tape&, std::span<const Var> v) { return project(ad::depthwise_conv2d(v[0], v[1], 1, 1), w + 15); },
        {uniform(rng, {1, 3, 5, 5}), uniform(rng, {3, 3, 3})});
  check("channel_bias", [&](Tape&, std::span<const Var> v) { return project(ad::channel_bias(v[0], v[1]), w + 16); },
        {uniform(rng, {2, 3, 2, 2}), uniform(rng, {3})});
  check("concat_channels",
        [&](Tape&, std::span<const Var> v) { return project(ad::concat_channels({v[0], v[1]}), w + 17); },
        {uniform(rng, {1, 2, 3, 3}), uniform(rng, {1, 1, 3, 3})});
  check("slice_channels",
        [&](Tape&, std::span<const Var> v) { return project(ad::slice_channels(v[0], 1, 2), w + 18); },
        {uniform(rng, {2, 4, 2, 2})});
  check("crop2d", [&](Tape&, std::span<const Var> v) { return project(ad::crop2d(v[0], 1, 2, 3, 2), w + 19); },
        {uniform(rng, {1, 2, 5, 5})});
  check("upsample_nearest",
        [&](Tape&, std::span<const Var> v) { return project(ad::upsample_nearest(v[0], 2), w + 20); },
        {uniform(rng, {1, 2, 3, 3})});
  check("downsample_nearest",
        [&](Tape&, std::span<const Var> v) { return project(ad::downsample_nearest(v[0], 2), w + 21); },
        {uniform(rng, {1, 2, 4, 4})});
  check("reshape", [&](Tape&, std::span<const Var> v) { return project(ad::reshape(v[0], {3, 4}), w + 22); },
        {uniform(rng, {2, 6})});
  check("window_tokens",
        [&](Tape&, std::span<const Var> v) { return project(ad::window_tokens(v[0], 2, 2), w + 23); },
        {uniform(rng, {1, 3, 4, 4})});
  check("window_merge",
        [&](Tape&, std::span<const Var> v) { return project(ad::window_merge(v[0], {1, 3, 4, 4}, 2, 2), w + 24); },
        {uniform(rng, {4, 4, 3})});
  check("cross_attention",
        [&](Tape&, std::span<const Var> v) { return project(ad::cross_attention(v[0], v[1], v[2]), w + 25); },
        {uniform(rng, {3, 5}), uniform(rng, {4, 5}), uniform(rng, {4, 5})});
  check("cross_attention_batched",
        [&](Tape&, std::span<const Var> v) { return project(ad::cross_attention(v[0], v[1], v[2]), w + 26); },
        {uniform(rng, {2, 3, 4}), uniform(rng, {2, 2, 4}), uniform(rng, {2, 2, 3})});
  check("dwt2", [&](Tape&, std::span<const Var> v) { return project(ad::dwt2(v[0]), w + 27); },
        {uniform(rng, {1, 2, 4, 6})});
  check("idwt2", [&](Tape&, std::span<const Var> v) { return project(ad::idwt2(v[0]), w + 28); },
        {uniform(rng, {1, 8, 2, 3})});
  check("ssim", [&](Tape&, std::span<const Var> v) { return ssim(v[0], v[1]); },
        {uniform(rng, {1, 2, 8, 8}, 0.0, 1.0), uniform(rng, {1, 2, 8, 8}, 0.0, 1.0)});

  {
    const EpsNetConfig cfg{1, 1, 2, 4, 3, 2};
    const ParamSet layout = randomized(init_eps_net(cfg, rng), rng, 0.5);
    const std::vector<std::size_t> ts{3, 17};
    check("eps_net",
          [&](Tape& tape, std::span<const Var> v) {
            return project(eps_net_forward(cfg, bind_inputs(tape, layout, v, 2), v[0], v[1], ts), w + 29);
          },
          with_params({uniform(rng, {2, 1, 4, 4}), uniform(rng, {2, 1, 4, 4})}, layout));
  }
  {
    const HfNetConfig cfg{3, 8};
    const ParamSet layout = randomized(init_hf_net(cfg, rng), rng, 0.5);
    check("hf_net",
          [&](Tape& tape, std::span<const Var> v) {
            return project(hf_net_forward(cfg, bind_inputs(tape, layout, v, 1), v[0]), w + 30);
          },
          with_params({uniform(rng, {1, 3, 6, 6})}, layout));
  }
  {
    // Noise-prediction loss through a 10-parameter predictor:
    // eps_hat = silu(conv3x3(x_t) + conv1x1(condition)).
    ParamSet layout;
    layout.add("k", uniform(rng, {1, 1, 3, 3}, -0.5, 0.5));
    layout.add("c", uniform(rng, {1, 1, 1, 1}, -0.5, 0.5));
    const TapePredictor tiny = [](const BoundParams& p, Var x_t, Var cond, std::span<const std::size_t>) {
      return ad::silu(ad::add(ad::conv2d(x_t, p["k"], 1, 1), ad::conv2d(cond, p["c"])));
    };
    const DiffusionSchedule sched = make_schedule(20);
    const std::vector<std::size_t> ts{4, 19};
    const Tensor eps = rng.normal_tensor({2, 1, 3, 3});
    const Tensor cond = uniform(rng, {2, 1, 3, 3});
    check("epsilon_loss",
          [&](Tape& tape, std::span<const Var> v) {
            return epsilon_loss(tiny, bind_inputs(tape, layout, v, 1), v[0], tape.constant(cond),
                                tape.constant(eps), ts, sched);
          },
          with_params({uniform(rng, {2, 1, 3, 3})}, layout));
  }
  {
    LossConfig cfg;
    const ParamSet perceptual = init_perceptual(cfg.perceptual);
    check("loss_recon",
          [&](Tape& tape, std::span<const Var> v) {
            return loss_recon(v[0], v[1], cfg, BoundParams(tape, perceptual, false));
          },
          {uniform(rng, {1, 3, 8, 8}, 0.0, 1.0), uniform(rng, {1, 3, 8, 8}, 0.0, 1.0)});
    check("loss_hf", [&](Tape&, std::span<const Var> v) { return loss_hf(v[0], v[1], cfg); },
          {uniform(rng, {1, 3, 4, 4}), uniform(rng, {1, 3, 4, 4})});
    check("loss_total",
          [&](Tape&, std::span<const Var> v) {
            return loss_total(ad::sum(ad::square(v[0])), ad::mean(v[1]), ad::sum(v[2]));
          },
          {uniform(rng, {3}), uniform(rng, {2}), uniform(rng, {2})});
  }
  return results;
}

}  // namespace lensless
