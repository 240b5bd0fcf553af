#include "lensless/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "lensless/errors.hpp"

namespace lensless {
namespace {

void check_t(std::size_t t, const DiffusionSchedule& s, std::size_t lowest, const char* op) {
  if (t < lowest || t > s.T) {
    throw std::out_of_range(std::string(op) + ": timestep " + std::to_string(t) +
                            " outside [" + std::to_string(lowest) + ", " + std::to_string(s.T) + "]");
  }
}

Tensor axpby(double a, const Tensor& x, double b, const Tensor& y) {
  require_same_shape(x, y, "diffusion update");
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x[i] + b * y[i];
  return out;
}

void require_finite(const Tensor& x, const char* op, std::size_t t) {
  if (!x.all_finite()) {
    throw NumericalError(std::string(op) + ": non-finite iterate at step t=" + std::to_string(t));
  }
}

Tensor predict(const NoisePredictor& predictor, const Tensor& x, const Tensor& cond, std::size_t t) {
  Tensor eps = predictor(x, cond, t);
  if (eps.shape() != x.shape()) {
    throw std::invalid_argument("noise predictor returned shape " + shape_to_string(eps.shape()) +
                                " for input " + shape_to_string(x.shape()));
  }
  return eps;
}

}  // namespace

DiffusionSchedule make_schedule(std::size_t T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("make_schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start < 1.0 && beta_end > 0.0 && beta_end < 1.0)) {
    throw std::invalid_argument("make_schedule: betas must lie in (0, 1)");
  }
  DiffusionSchedule s;
  s.T = T;
  s.beta.assign(T + 1, 0.0);
  s.alpha.assign(T + 1, 1.0);
  s.alpha_bar.assign(T + 1, 1.0);
  s.posterior_var.assign(T + 1, 0.0);
  for (std::size_t t = 1; t <= T; ++t) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(T - 1);
    s.beta[t] = beta_start + (beta_end - beta_start) * frac;
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    s.posterior_var[t] = (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]) * s.beta[t];
  }
  return s;
}

Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& eps, const DiffusionSchedule& s) {
  check_t(t, s, 0, "q_sample");
  return axpby(std::sqrt(s.alpha_bar[t]), x0, std::sqrt(1.0 - s.alpha_bar[t]), eps);
}

Tensor forward_step(const Tensor& x_prev, std::size_t t, const DiffusionSchedule& s, Rng& rng) {
  check_t(t, s, 1, "forward_step");
  const Tensor z = rng.normal_tensor(x_prev.shape());
  return axpby(std::sqrt(s.alpha[t]), x_prev, std::sqrt(1.0 - s.alpha[t]), z);
}

PosteriorStep posterior_mean_variance(const Tensor& x_t, const Tensor& eps_hat, std::size_t t,
                                      const DiffusionSchedule& s) {
  check_t(t, s, 1, "posterior_mean_variance");
  const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha[t]);
  const double eps_coef = s.beta[t] / std::sqrt(1.0 - s.alpha_bar[t]);
  PosteriorStep p{axpby(inv_sqrt_alpha, x_t, -inv_sqrt_alpha * eps_coef, eps_hat), s.posterior_var[t]};
  return p;
}

Tensor ddpm_sample(const NoisePredictor& predictor, const Tensor& condition, const Tensor& x_T,
                   const DiffusionSchedule& s, Rng* rng, std::vector<Tensor>* trajectory) {
  Tensor x = x_T;
  if (trajectory) trajectory->assign(1, x);
  for (std::size_t t = s.T; t >= 1; --t) {
    const Tensor eps = predict(predictor, x, condition, t);
    PosteriorStep step = posterior_mean_variance(x, eps, t, s);
    if (rng && t > 1 && step.variance > 0.0) {
      const double sd = std::sqrt(step.variance);
      const Tensor z = rng->normal_tensor(x.shape());
      for (std::size_t i = 0; i < z.size(); ++i) step.mean[i] += sd * z[i];
    }
    x = std::move(step.mean);
    require_finite(x, "ddpm_sample", t);
    if (trajectory) trajectory->push_back(x);
  }
  return x;
}

Tensor ddpm_sample(const NoisePredictor& predictor, const Tensor& condition, const Shape& shape,
                   const DiffusionSchedule& s, Rng& rng) {
  const Tensor x_T = rng.normal_tensor(shape);
  return ddpm_sample(predictor, condition, x_T, s, &rng);
}

std::vector<std::size_t> ddim_timesteps(std::size_t T, std::size_t steps) {
  if (steps < 1 || steps > T) {
    throw std::invalid_argument("ddim: steps must lie in [1, T], got " + std::to_string(steps));
  }
  std::vector<std::size_t> ts;
  for (std::size_t i = steps; i >= 1; --i) ts.push_back(i * T / steps);
  return ts;
}

Tensor ddim_sample(const NoisePredictor& predictor, const Tensor& condition, const Tensor& x_T,
                   const DiffusionSchedule& s, const DdimOptions& options,
                   std::vector<Tensor>* trajectory) {
  if (!(options.eta >= 0.0)) throw std::invalid_argument("ddim: eta must be >= 0");
  const auto ts = ddim_timesteps(s.T, options.steps);
  Tensor x = x_T;
  if (trajectory) trajectory->assign(1, x);
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const std::size_t t = ts[k];
    const std::size_t prev = k + 1 < ts.size() ? ts[k + 1] : 0;
    const double ab = s.alpha_bar[t], ab_prev = s.alpha_bar[prev];
    const Tensor eps = predict(predictor, x, condition, t);
    const Tensor x0 = axpby(1.0 / std::sqrt(ab), x, -std::sqrt(1.0 - ab) / std::sqrt(ab), eps);
    const double sigma = options.eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) *
                         std::sqrt(1.0 - ab / ab_prev);
    const double dir = std::sqrt(std::max(1.0 - ab_prev - sigma * sigma, 0.0));
    x = axpby(std::sqrt(ab_prev), x0, dir, eps);
    if (options.noise && sigma > 0.0) {
      const Tensor z = options.noise->normal_tensor(x.shape());
      for (std::size_t i = 0; i < z.size(); ++i) x[i] += sigma * z[i];
    }
    require_finite(x, "ddim_sample", t);
    if (trajectory) trajectory->push_back(x);
  }
  return x;
}

namespace {

Shape with_batch(const Shape& shape) {
  Shape out{1};
  out.insert(out.end(), shape.begin(), shape.end());
  return out;
}

}  // namespace

NoisePredictor bind_predictor(TapePredictor predictor, const ParamSet& params) {
  return [predictor = std::move(predictor), params](const Tensor& x_t, const Tensor& cond,
                                                    std::size_t t) {
    Tape tape;
    tape.set_grad_enabled(false);
    BoundParams bound(tape, params, false);
    const Var x = tape.constant(x_t.reshaped(with_batch(x_t.shape())));
    const Var c = tape.constant(cond.reshaped(with_batch(cond.shape())));
    const std::size_t ts[1] = {t};
    const Var eps = predictor(bound, x, c, ts);
    return eps.value().reshaped(x_t.shape());
  };
}

Var ddim_rollout(const TapePredictor& predictor, const BoundParams& params, Var x_T, Var condition,
                 const DiffusionSchedule& s, std::size_t steps) {
  const auto ts = ddim_timesteps(s.T, steps);
  const std::size_t batch = x_T.value().dim(0);
  Var x = x_T;
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const std::size_t t = ts[k];
    const std::size_t prev = k + 1 < ts.size() ? ts[k + 1] : 0;
    const double ab = s.alpha_bar[t], ab_prev = s.alpha_bar[prev];
    const std::vector<std::size_t> tv(batch, t);
    const Var eps = predictor(params, x, condition, tv);
    // x_prev = sqrt(ab_prev) (x - sqrt(1-ab) eps) / sqrt(ab) + sqrt(1-ab_prev) eps
    const double cx = std::sqrt(ab_prev / ab);
    const double ce = std::sqrt(1.0 - ab_prev) - std::sqrt(ab_prev) * std::sqrt(1.0 - ab) / std::sqrt(ab);
    x = ad::add(ad::scale(x, cx), ad::scale(eps, ce));
  }
  return x;
}

Var epsilon_loss(const TapePredictor& predictor, const BoundParams& params, Var x0, Var condition,
                 Var eps, std::span<const std::size_t> t, const DiffusionSchedule& s) {
  const Tensor& x0v = x0.value();
  if (x0v.rank() < 1 || t.size() != x0v.dim(0)) {
    throw std::invalid_argument("epsilon_loss: one timestep per batch item required");
  }
  if (eps.value().shape() != x0v.shape()) {
    throw std::invalid_argument("epsilon_loss: eps must match x0");
  }
  Tape& tape = *x0.tape();
  // Per-item scales as constant tensors so items may use different t.
  const std::size_t per_item = x0v.size() / x0v.dim(0);
  Tensor a(x0v.shape(), 0.0), b(x0v.shape(), 0.0);
  for (std::size_t n = 0; n < t.size(); ++n) {
    check_t(t[n], s, 1, "epsilon_loss");
    for (std::size_t i = 0; i < per_item; ++i) {
      a[n * per_item + i] = std::sqrt(s.alpha_bar[t[n]]);
      b[n * per_item + i] = std::sqrt(1.0 - s.alpha_bar[t[n]]);
    }
  }
  const Var x_t = ad::add(ad::mul(tape.constant(std::move(a)), x0), ad::mul(tape.constant(std::move(b)), eps));
  const Var eps_hat = predictor(params, x_t, condition, t);
  return ad::mean(ad::square(ad::sub(eps_hat, eps)));
}

Tensor stack_batch(std::span<const Tensor> items) {
  if (items.empty()) throw std::invalid_argument("stack_batch: no items");
  Shape shape{items.size()};
  shape.insert(shape.end(), items[0].shape().begin(), items[0].shape().end());
  std::vector<double> data;
  data.reserve(items.size() * items[0].size());
  for (const Tensor& t : items) {
    require_same_shape(t, items[0], "stack_batch");
    data.insert(data.end(), t.values().begin(), t.values().end());
  }
  return Tensor(std::move(shape), std::move(data));
}

EpsilonTrainResult train_epsilon(const TapePredictor& predictor, ParamSet init,
                                 std::span<const EpsilonExample> data, const DiffusionSchedule& s,
                                 const EpsilonTrainConfig& config) {
  if (data.empty()) throw DataError("train_epsilon: empty dataset");
  if (config.batch_size < 1) throw std::invalid_argument("train_epsilon: batch_size must be >= 1");
  EpsilonTrainResult result;
  result.params = std::move(init);
  Adam adam(config.adam, result.params);
  Ema ema(config.ema_rate, result.params);
  Rng rng(config.seed);
  result.losses.reserve(config.steps);
  std::vector<Tensor> conds, targets, noises;
  std::vector<std::size_t> ts;
  for (std::size_t step = 0; step < config.steps; ++step) {
    conds.clear();
    targets.clear();
    noises.clear();
    ts.clear();
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      const EpsilonExample& ex = data[rng.below(data.size())];
      conds.push_back(ex.condition);
      targets.push_back(ex.target);
      ts.push_back(1 + rng.below(s.T));
      noises.push_back(rng.normal_tensor(ex.target.shape()));
    }
    Tape tape;
    BoundParams bound(tape, result.params, true);
    const Var loss = epsilon_loss(predictor, bound, tape.constant(stack_batch(targets)),
                                  tape.constant(stack_batch(conds)), tape.constant(stack_batch(noises)),
                                  ts, s);
    const double value = loss.value().item();
    if (!std::isfinite(value)) {
      throw NumericalError("train_epsilon: non-finite loss at step " + std::to_string(step + 1));
    }
    tape.backward(loss);
    adam.step(result.params, bound.gradients());
    ema.update(result.params);
    result.losses.push_back(value);
    if (config.on_step) config.on_step(step + 1, value);
  }
  result.ema = ema.shadow();
  return result;
}

}  // namespace lensless
