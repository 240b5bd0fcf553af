#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "lensless/autodiff.hpp"
#include "lensless/optim.hpp"
#include "lensless/rng.hpp"
#include "lensless/tensor.hpp"

namespace lensless {

/// Variance schedule. Arrays are indexed 0..T; index 0 is the clean-data
/// convention (beta 0, alpha_bar 1).
struct DiffusionSchedule {
  std::size_t T = 0;
  std::vector<double> beta, alpha, alpha_bar, posterior_var;
};

/// Linear beta from beta_start (t=1) to beta_end (t=T).
DiffusionSchedule make_schedule(std::size_t T, double beta_start = 1e-4, double beta_end = 0.02);

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps, for t in [0, T].
Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& eps, const DiffusionSchedule& s);

/// One forward transition x_t ~ N(sqrt(alpha_t) x_{t-1}, (1 - alpha_t) I), t in [1, T].
Tensor forward_step(const Tensor& x_prev, std::size_t t, const DiffusionSchedule& s, Rng& rng);

struct PosteriorStep {
  Tensor mean;
  double variance = 0.0;
};

/// mean = (x_t - beta_t / sqrt(1 - alpha_bar_t) eps_hat) / sqrt(alpha_t),
/// variance = posterior_var[t].
PosteriorStep posterior_mean_variance(const Tensor& x_t, const Tensor& eps_hat, std::size_t t,
                                      const DiffusionSchedule& s);

/// eps_hat = f(x_t, condition, t); output shaped like x_t.
using NoisePredictor = std::function<Tensor(const Tensor& x_t, const Tensor& condition, std::size_t t)>;

/// Ancestral sampling from x_T. With rng == nullptr no noise is injected
/// (z = 0 at every step). When `trajectory` is given it receives x_T..x_0.
Tensor ddpm_sample(const NoisePredictor& predictor, const Tensor& condition, const Tensor& x_T,
                   const DiffusionSchedule& s, Rng* rng, std::vector<Tensor>* trajectory = nullptr);
/// Draws x_T ~ N(0, I) of `shape` from rng, then samples with noise.
Tensor ddpm_sample(const NoisePredictor& predictor, const Tensor& condition, const Shape& shape,
                   const DiffusionSchedule& s, Rng& rng);

struct DdimOptions {
  std::size_t steps = 10;
  /// 0 gives the deterministic implicit sampler; 1 matches the ancestral
  /// variance when steps == T.
  double eta = 0.0;
  /// Noise source for eta > 0; when null the variance term is dropped.
  Rng* noise = nullptr;
};

/// Timesteps floor(i T / steps) for i = steps..1, descending.
std::vector<std::size_t> ddim_timesteps(std::size_t T, std::size_t steps);

/// Implicit sampling over an evenly spaced sub-schedule of length steps.
Tensor ddim_sample(const NoisePredictor& predictor, const Tensor& condition, const Tensor& x_T,
                   const DiffusionSchedule& s, const DdimOptions& options = {},
                   std::vector<Tensor>* trajectory = nullptr);

/// Differentiable noise predictor for batched inputs. x_t and condition are
/// [N,...]; t holds one timestep per batch item.
using TapePredictor = std::function<Var(const BoundParams& params, Var x_t, Var condition,
                                        std::span<const std::size_t> t)>;

/// Wraps a tape predictor for single-item inference (gradients disabled).
/// Inputs of the samplers are given without the batch axis.
NoisePredictor bind_predictor(TapePredictor predictor, const ParamSet& params);

/// Deterministic DDIM rollout recorded on the tape so losses on x0 reach the
/// predictor's parameters. x_T and condition carry the batch axis.
Var ddim_rollout(const TapePredictor& predictor, const BoundParams& params, Var x_T, Var condition,
                 const DiffusionSchedule& s, std::size_t steps);

/// mean((eps - eps_hat(x_t, condition, t))^2) with x_t = q_sample(x0, t, eps).
Var epsilon_loss(const TapePredictor& predictor, const BoundParams& params, Var x0, Var condition,
                 Var eps, std::span<const std::size_t> t, const DiffusionSchedule& s);

struct EpsilonExample {
  Tensor condition;
  Tensor target;
};

struct EpsilonTrainConfig {
  std::size_t steps = 1000;
  std::size_t batch_size = 8;
  AdamConfig adam{};
  double ema_rate = 0.9999;
  std::uint64_t seed = 0;
  /// Called after each step with (step, loss).
  std::function<void(std::size_t, double)> on_step;
};

struct EpsilonTrainResult {
  ParamSet params;
  ParamSet ema;
  std::vector<double> losses;
};

/// Minimizes the noise-prediction loss with Adam over uniformly drawn
/// (example, t, eps) triples; per step the draws are taken in batch order
/// from one Rng, so runs are reproducible.
EpsilonTrainResult train_epsilon(const TapePredictor& predictor, ParamSet init,
                                 std::span<const EpsilonExample> data, const DiffusionSchedule& s,
                                 const EpsilonTrainConfig& config);

/// Stacks [C,...] examples into [N,C,...].
Tensor stack_batch(std::span<const Tensor> items);

}  // namespace lensless
