#include <gtest/gtest.h>

#include <filesystem>

#include "lensless/enhance.hpp"
#include "lensless/errors.hpp"
#include "lensless/gradcheck_suite.hpp"
#include "lensless/wavelet.hpp"

using namespace lensless;

namespace {

Tensor smooth_image(Rng& rng, std::size_t c, std::size_t h, std::size_t w) {
  Tensor x({c, h, w}, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    const double a = rng.uniform(), b = rng.uniform();
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t col = 0; col < w; ++col)
        x[(k * h + r) * w + col] = 0.2 + 0.3 * a * r / h + 0.3 * b * col / w + 0.1 * rng.uniform();
  }
  return x;
}

Stage2Config small_config() {
  Stage2Config c;
  c.hf_levels = {1, 2};
  c.eps.hidden = 8;
  c.eps.attn_dim = 4;
  c.eps.max_window = 4;
  c.hf.features = 4;
  c.hf.max_window = 4;
  return c;
}

double scalar_loss(const std::function<Var(Tape&)>& f) {
  Tape tape;
  return f(tape).value().item();
}

Tensor batch(const Tensor& x) {
  Shape s{1};
  s.insert(s.end(), x.shape().begin(), x.shape().end());
  return x.reshaped(s);
}

}  // namespace

TEST(Stage1, RecoversSceneFromExpectedCaptureAtAnyExposure) {
  Rng rng(1);
  const Tensor x = smooth_image(rng, 3, 12, 12);
  SensorParams sensor;
  sensor.bit_depth = 16;
  WienerConfig w;
  w.lambda = 0.0;
  for (double t : {0.3, 0.5, 0.7}) {
    const SensorParams s = sensor.with_exposure(t, 0.7);
    Tensor capture(x.shape(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) capture[i] = expected_adu(x[i], s);
    EXPECT_LT(max_abs_diff(stage1(capture, delta_psf(3), sensor, t, 0.7, w), x), 1e-12) << t;
  }
}

TEST(Stage1, ClampsToUnitRange) {
  SensorParams sensor;
  const Tensor capture({1, 4, 4}, 255.0);
  WienerConfig w;
  w.lambda = 0.0;
  const Tensor x = stage1(capture, delta_psf(1), sensor, 0.7, 0.7, w);
  for (double v : x.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(LossRecon, ZeroAtPerfectReconstructionAndMaeReduction) {
  Rng rng(2);
  const Tensor a = batch(smooth_image(rng, 3, 8, 8)), b = batch(smooth_image(rng, 3, 8, 8));
  const LossConfig cfg;
  const ParamSet feat = init_perceptual(cfg.perceptual);
  EXPECT_NEAR(scalar_loss([&](Tape& t) {
                return loss_recon(t.constant(a), t.constant(a), cfg, BoundParams(t, feat, false));
              }),
              0.0, 1e-12);
  LossConfig mae;
  mae.w2 = mae.w3 = 0.0;
  double ref = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ref += std::abs(a[i] - b[i]);
  ref /= static_cast<double>(a.size());
  EXPECT_NEAR(scalar_loss([&](Tape& t) {
                return loss_recon(t.constant(a), t.constant(b), mae, BoundParams(t, feat, false));
              }),
              ref, 1e-14);
  EXPECT_GT(scalar_loss([&](Tape& t) {
              return loss_recon(t.constant(a), t.constant(b), cfg, BoundParams(t, feat, false));
            }),
            ref);
}

TEST(LossHf, ZeroAndConstantResidual) {
  Rng rng(3);
  const Tensor hf = batch(smooth_image(rng, 3, 6, 6));
  LossConfig cfg;
  EXPECT_EQ(scalar_loss([&](Tape& t) { return loss_hf(t.constant(hf), t.constant(hf), cfg); }), 0.0);
  const double c = 0.3;
  Tensor shifted = hf;
  for (double& v : shifted.data()) v += c;
  EXPECT_NEAR(scalar_loss([&](Tape& t) { return loss_hf(t.constant(shifted), t.constant(hf), cfg); }),
              cfg.w4 * c * c, 1e-14);
}

TEST(LossTotal, SumsParts) {
  Tape t;
  EXPECT_EQ(loss_total(t.constant(Tensor::scalar(0)), t.constant(Tensor::scalar(0)), t.constant(Tensor::scalar(0)))
                .value()
                .item(),
            0.0);
  EXPECT_DOUBLE_EQ(
      loss_total(t.constant(Tensor::scalar(0.25)), t.constant(Tensor::scalar(1.5)), t.constant(Tensor::scalar(2.0)))
          .value()
          .item(),
      3.75);
  LossConfig bad;
  bad.w1 = bad.w2 = bad.w3 = bad.w4 = bad.w5 = 0.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  std::size_t seen = 0;
  for (const GradCheckResult& r : run_gradcheck_suite()) {
    if (r.name == "loss_recon" || r.name == "loss_hf" || r.name == "loss_total" || r.name == "hf_net") {
      EXPECT_TRUE(r.passed) << r.name << " " << r.max_rel_error;
      ++seen;
    }
  }
  EXPECT_EQ(seen, 4u);
}

TEST(HfNet, UntrainedNetworkIsIdentityAndChecksShapes) {
  Rng rng(4);
  const HfNetConfig cfg{4, 4};
  const ParamSet p = init_hf_net(cfg, rng);
  for (std::size_t side : {2u, 6u, 8u, 12u}) {
    const Tensor bands = rng.normal_tensor({2, 6, side, side});
    Tape tape;
    const Var out = hf_net_forward(cfg, BoundParams(tape, p, false), tape.constant(bands));
    EXPECT_EQ(out.value(), bands);
  }
  Tape tape;
  EXPECT_THROW(hf_net_forward(cfg, BoundParams(tape, p, false), tape.constant(Tensor({1, 4, 4, 4}, 0.0))),
               std::invalid_argument);
}

TEST(Stage2, OracleAblationReconstructsCleanTarget) {
  Rng rng(5);
  const Tensor clean = smooth_image(rng, 3, 16, 16);
  Tensor noisy = clean;
  for (double& v : noisy.data()) v += 0.05 * rng.normal();
  const Stage2Config cfg = small_config();
  const DiffusionSchedule s = cfg.schedule();
  const WaveletPyramid target = dwt2_multi(clean, 2);
  Tensor latent = target.coarse();
  for (double& v : latent.data()) v = (v - cfg.ll_offset) / cfg.ll_scale;
  const NoisePredictor oracle = [&](const Tensor& x, const Tensor&, std::size_t t) {
    const double ab = s.alpha_bar[t];
    Tensor e(x.shape(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) e[i] = (x[i] - std::sqrt(ab) * latent[i]) / std::sqrt(1 - ab);
    return e;
  };
  const HfRefiner clean_details = [&](std::size_t level, const Tensor& bands) {
    const SubbandSet& b = target.levels[level - 1];
    Tensor out(bands.shape(), 0.0);
    const std::size_t n = b.lh.size();
    std::copy(b.lh.values().begin(), b.lh.values().end(), out.data().begin());
    std::copy(b.hl.values().begin(), b.hl.values().end(), out.data().begin() + n);
    std::copy(b.hh.values().begin(), b.hh.values().end(), out.data().begin() + 2 * n);
    return out;
  };
  EXPECT_LT(max_abs_diff(stage2_apply(noisy, cfg, oracle, clean_details), clean), 1e-8);
}

TEST(Stage2, UntrainedModelKeepsDimsAndIsDeterministic) {
  const Stage2Model model = init_stage2(small_config(), 3);
  Rng rng(6);
  const Tensor x = smooth_image(rng, 3, 384, 384);
  const Tensor y = stage2(x, model);
  EXPECT_EQ(y.shape(), (Shape{3, 384, 384}));
  const Tensor small = smooth_image(rng, 3, 16, 16);
  EXPECT_EQ(stage2(small, model), stage2(small, model));
}

TEST(Checkpoint, RoundTripAndMissingDirectory) {
  const Stage2Model model = init_stage2(small_config(), 8);
  const auto dir = std::filesystem::temp_directory_path() / "lensless_ckpt_test";
  std::filesystem::remove_all(dir);
  save_checkpoint(dir, model);
  const Stage2Model back = load_checkpoint(dir);
  EXPECT_EQ(back.params, model.params);
  EXPECT_EQ(back.config.hf_levels, model.config.hf_levels);
  EXPECT_EQ(back.config.eps.hidden, model.config.eps.hidden);
  EXPECT_EQ(back.config.sample_seed, model.config.sample_seed);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(load_checkpoint(dir), DataError);
}

TEST(TrainStage2, ShortRunIsFiniteAndReproducible) {
  Rng rng(7);
  std::vector<Stage2Example> data;
  for (int i = 0; i < 4; ++i) {
    const Tensor target = smooth_image(rng, 3, 8, 8);
    Tensor degraded = target;
    for (double& v : degraded.data()) v = std::clamp(v + 0.1 * rng.normal(), 0.0, 1.0);
    data.push_back({degraded, target});
  }
  Stage2TrainConfig cfg;
  cfg.steps = 4;
  cfg.batch_size = 2;
  cfg.recon_every = 2;
  cfg.ema_rate = 1.0;
  std::size_t rollouts = 0;
  cfg.on_step = [&](std::size_t, double l1, double l2, double l3) {
    EXPECT_TRUE(std::isfinite(l1) && std::isfinite(l2) && std::isfinite(l3));
    if (l2 > 0.0) ++rollouts;
  };
  Stage2Config sc = small_config();
  sc.ddim_steps = 2;
  const Stage2Model init = init_stage2(sc, 1);
  const Stage2TrainResult a = train_stage2(init, data, cfg);
  EXPECT_EQ(rollouts, 2u);
  EXPECT_EQ(a.model.params, init.params);
  EXPECT_FALSE(a.raw.params == init.params);
  for (std::size_t level : {1u, 2u}) {
    const std::string prefix = "hf.l" + std::to_string(level) + ".";
    EXPECT_FALSE(a.raw.params.extract(prefix) == init.params.extract(prefix)) << prefix;
  }
  cfg.on_step = nullptr;
  const Stage2TrainResult b = train_stage2(init, data, cfg);
  EXPECT_EQ(a.raw.params, b.raw.params);
  EXPECT_EQ(a.losses, b.losses);
}
