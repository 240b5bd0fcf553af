#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "lensless/diffusion.hpp"
#include "lensless/metrics.hpp"
#include "lensless/networks.hpp"
#include "lensless/optics.hpp"
#include "lensless/recon.hpp"
#include "lensless/sensor.hpp"

namespace lensless {

/// Stage 1: exposure-aware ADU normalization followed by Wiener
/// deconvolution, clamped to [0, 1].
Tensor stage1(const Tensor& capture, const Psf& psf, const SensorParams& sensor, double exposure_s,
              double reference_exposure_s, const WienerConfig& wiener);

struct LossConfig {
  double w1 = 1.0;   // MAE
  double w2 = 0.2;   // 1 - SSIM
  double w3 = 0.01;  // feature distance at f2 and f4
  double w4 = 1.0;   // HF MSE
  double w5 = 0.1;   // HF total variation of the residual
  PerceptualConfig perceptual{};
  SsimConfig ssim{};

  void validate() const;
};

/// w1 MAE + w2 (1 - SSIM) + w3 (mean sq. f2 distance + mean sq. f4 distance)
/// for [N,C,H,W] inputs. `perceptual` binds the fixed extractor weights.
Var loss_recon(Var x_hat, Var x, const LossConfig& config, const BoundParams& perceptual);
/// w4 MSE + w5 TV(hf_hat - hf), TV being the mean absolute horizontal plus
/// mean absolute vertical difference.
Var loss_hf(Var hf_hat, Var hf, const LossConfig& config);
Var loss_total(Var l1, Var l2, Var l3);

struct Stage2Config {
  std::size_t levels = 2;
  /// Wavelet levels whose detail subbands are refined by an HF network.
  std::vector<std::size_t> hf_levels{2};
  /// The diffusion latent is (LL - ll_offset) / ll_scale.
  double ll_offset = 2.0;
  double ll_scale = 2.0;
  std::size_t T = 200;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::size_t ddim_steps = 10;
  std::uint64_t sample_seed = 7;
  EpsNetConfig eps{};
  HfNetConfig hf{};

  void validate() const;
  DiffusionSchedule schedule() const { return make_schedule(T, beta_start, beta_end); }
};

/// Parameters are named "eps.<...>" and "hf.l<level>.<...>".
struct Stage2Model {
  Stage2Config config;
  ParamSet params;
};

Stage2Model init_stage2(const Stage2Config& config, std::uint64_t seed);

/// Refines HF bands of one level: input and output [1,3C,h,w].
using HfRefiner = std::function<Tensor(std::size_t level, const Tensor& bands)>;

/// Implicit-diffusion sample of the coarse LL band conditioned on the LL of
/// x_init ([C,H,W]); the initial noise comes from config.sample_seed.
Tensor sample_ll(const Tensor& x_init, const Stage2Config& config, const NoisePredictor& ll_predictor);

/// Wavelet split, LL sampled by implicit diffusion conditioned on the input's
/// LL, detail bands of the configured levels passed through `hf`, inverse
/// transform. Input [C,H,W].
Tensor stage2_apply(const Tensor& x_init, const Stage2Config& config, const NoisePredictor& ll_predictor,
                    const HfRefiner& hf);
Tensor stage2(const Tensor& x_init, const Stage2Model& model);

/// Tape predictor of the model's LL network.
TapePredictor eps_predictor(const EpsNetConfig& config);

struct Stage2Example {
  Tensor stage1;
  Tensor target;
};

struct Stage2TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 8;
  AdamConfig adam{1e-3, 0.9, 0.999, 1e-8, 0.8, 0};
  double ema_rate = 0.9999;
  std::uint64_t seed = 0;
  /// Every recon_every-th step adds the reconstruction loss through a
  /// differentiable implicit-sampling rollout (0 disables).
  std::size_t recon_every = 10;
  LossConfig loss{};
  /// (step, L1, L2, L3); L2 is 0 on steps without a rollout.
  std::function<void(std::size_t, double, double, double)> on_step;
};

struct Stage2TrainResult {
  Stage2Model model;  // EMA weights
  Stage2Model raw;    // last iterate
  std::vector<double> losses;
};

Stage2TrainResult train_stage2(Stage2Model init, std::span<const Stage2Example> data,
                               const Stage2TrainConfig& config);

/// Directory with manifest.json (config, tensor names, shapes, byte offsets)
/// and params.bin holding the concatenated LLT1 blocks.
void save_checkpoint(const std::filesystem::path& dir, const Stage2Model& model);
Stage2Model load_checkpoint(const std::filesystem::path& dir);

}  // namespace lensless
