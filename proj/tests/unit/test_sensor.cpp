#include <gtest/gtest.h>

#include <cmath>

#include "lensless/errors.hpp"
#include "lensless/sensor.hpp"

using namespace lensless;

namespace {

struct Moments {
  double mean = 0.0, var = 0.0;
};

Moments moments(const Tensor& t) {
  Moments m;
  for (double v : t.values()) m.mean += v;
  m.mean /= static_cast<double>(t.size());
  for (double v : t.values()) m.var += (v - m.mean) * (v - m.mean);
  m.var /= static_cast<double>(t.size() - 1);
  return m;
}

constexpr std::size_t kMega = 1000000;

}  // namespace

TEST(SensorParams, DefaultsAndValidation) {
  const SensorParams p;
  EXPECT_EQ(p.photon_scale, 1000.0);
  EXPECT_EQ(p.quantum_efficiency, 0.7);
  EXPECT_EQ(p.read_noise_std, 2.63);
  EXPECT_EQ(p.adc_gain, 0.23);
  EXPECT_EQ(p.adc_baseline, 4.48);
  EXPECT_EQ(p.bit_depth, 8);
  EXPECT_EQ(p.max_code(), 255.0);
  SensorParams bad = p;
  bad.quantum_efficiency = 1.2;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = p;
  bad.bit_depth = 17;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  EXPECT_DOUBLE_EQ(p.with_exposure(0.35).photon_scale, 500.0);
}

TEST(PhotonFlux, ScalesByK) {
  const SensorParams p;
  EXPECT_EQ(photon_flux(Tensor({2, 2}, 0.0), p), Tensor({2, 2}, 0.0));
  EXPECT_EQ(photon_flux(Tensor({1}, 1.0), p)[0], 1000.0);
  EXPECT_EQ(photon_flux(Tensor({1}, 0.5), p)[0], 500.0);
  EXPECT_THROW(photon_flux(Tensor({1}, 1.01), p), DataError);
  EXPECT_THROW(photon_flux(Tensor({1}, -0.01), p), DataError);
}

TEST(CaptureElectrons, ZeroMeanGivesZero) {
  Rng rng(1);
  EXPECT_EQ(capture_electrons(Tensor({4, 4}, 0.0), SensorParams{}, rng), Tensor({4, 4}, 0.0));
}

TEST(CaptureElectrons, ScaledPoissonMoments) {
  Rng rng(2);
  const Tensor e = capture_electrons(Tensor({kMega}, 50.0), SensorParams{}, rng);
  const Moments m = moments(e);
  EXPECT_NEAR(m.mean, 35.0, 0.35);
  EXPECT_NEAR(m.var, 0.49 * 50.0, 0.02 * 0.49 * 50.0);
}

TEST(CaptureElectrons, ExactRegimeMomentsBelowCrossover) {
  Rng rng(3);
  SensorParams p;
  p.quantum_efficiency = 1.0;
  const Tensor e = capture_electrons(Tensor({kMega}, 4.0), p, rng);
  const Moments m = moments(e);
  EXPECT_NEAR(m.mean, 4.0, 0.02);
  EXPECT_NEAR(m.var, 4.0, 0.04);
  // P(0) = e^-4 for an exact Poisson draw.
  std::size_t zeros = 0;
  for (double v : e.values()) zeros += v == 0.0;
  const double p0 = static_cast<double>(zeros) / static_cast<double>(kMega);
  EXPECT_NEAR(p0, std::exp(-4.0), 4.0 * std::sqrt(std::exp(-4.0) / kMega));
}

TEST(CaptureElectrons, RejectsNegativeMean) {
  Rng rng(4);
  EXPECT_THROW(capture_electrons(Tensor({1}, -1.0), SensorParams{}, rng), DataError);
}

TEST(CaptureElectrons, DeterministicUnderSeed) {
  Rng a(5), b(5);
  const Tensor x({64}, 12.5);
  EXPECT_EQ(capture_electrons(x, SensorParams{}, a), capture_electrons(x, SensorParams{}, b));
}

TEST(ReadNoise, ZeroSigmaIsExact) {
  SensorParams p;
  p.read_noise_std = 0.0;
  Rng rng(6);
  const Tensor x({3}, std::vector<double>{1.5, 2.0, 7.0});
  EXPECT_EQ(add_read_noise(x, p, rng), x);
}

TEST(ReadNoise, GaussianMoments) {
  Rng rng(7);
  const Moments m = moments(add_read_noise(Tensor({kMega}, 0.0), SensorParams{}, rng));
  EXPECT_NEAR(std::sqrt(m.var), 2.63, 0.0263);
  EXPECT_NEAR(m.mean, 0.0, 0.01);
}

TEST(Digitize, AffineMap) {
  const SensorParams p;
  EXPECT_DOUBLE_EQ(digitize(Tensor({1}, 0.0), p)[0], 4.48);
  EXPECT_DOUBLE_EQ(digitize(Tensor({1}, 100.0), p)[0], 27.48);
  const double a = digitize(Tensor({1}, 12.0), p)[0], b = digitize(Tensor({1}, 12.0 + 5.0), p)[0];
  EXPECT_NEAR(b - a, 0.23 * 5.0, 1e-12);
}

TEST(Quantize, ClampAndRoundHalfAwayFromZero) {
  const SensorParams p;
  const Tensor q = quantize(Tensor({5}, std::vector<double>{4.48, 300.0, -1.2, 2.5, 254.5}), p);
  EXPECT_EQ(q, Tensor({5}, std::vector<double>{4, 255, 0, 3, 255}));
}

TEST(SimulateCapture, NoiseFloorAtZeroSignal) {
  SensorParams p;
  p.read_noise_std = 0.0;
  Rng rng(8);
  EXPECT_EQ(simulate_capture(Tensor({4, 4}, 0.0), p, rng), Tensor({4, 4}, 4.0));
}

TEST(SimulateCapture, FullScaleMeanMatchesChain) {
  Rng rng(9);
  const SensorParams p;
  const Moments m = moments(simulate_capture(Tensor({kMega}, 1.0), p, rng));
  EXPECT_NEAR(expected_adu(1.0, p), 165.48, 1e-12);
  EXPECT_NEAR(m.mean, 165.48, 0.01 * 165.48);
}

TEST(SimulateCapture, SameSeedBitIdentical) {
  Rng a(10), b(10);
  const Tensor x({32, 32}, 0.3);
  EXPECT_EQ(simulate_capture(x, SensorParams{}, a), simulate_capture(x, SensorParams{}, b));
}

TEST(SimulateCapture, OutputsAreCodesInRange) {
  Rng rng(11);
  Tensor x({1000}, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i) / 999.0;
  SensorParams p;
  p.photon_scale = 3000.0;  // drives the top of the range into clamping
  for (double v : simulate_capture(x, p, rng).values()) {
    EXPECT_EQ(v, std::round(v));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 255.0);
  }
}

TEST(SimulateCapture, MonotoneInExpectation) {
  const SensorParams p;
  const double levels[] = {0.1, 0.4, 0.8};
  double prev_mean = -1.0;
  for (std::size_t i = 0; i < 3; ++i) {
    Rng rng(12 + i);
    const Moments m = moments(simulate_capture(Tensor({100000}, levels[i]), p, rng));
    const double se = std::sqrt(m.var / 100000.0);
    EXPECT_GT(m.mean + 3.0 * se, prev_mean);
    prev_mean = m.mean;
  }
}

TEST(CaptureElectrons, VarianceGrowsWithSignal) {
  const SensorParams p;
  double prev = -1.0;
  for (double x : {0.01, 0.1, 0.5}) {
    Rng rng(20);
    const Moments m = moments(capture_electrons(photon_flux(Tensor({100000}, x), p), p, rng));
    EXPECT_GT(m.var, prev);
    prev = m.var;
  }
}

TEST(NormalizeCapture, InvertsExpectedChain) {
  const SensorParams p;
  const Tensor adu({2}, std::vector<double>{expected_adu(0.25, p), expected_adu(0.75, p)});
  const Tensor x = normalize_capture(adu, p);
  EXPECT_NEAR(x[0], 0.25, 1e-12);
  EXPECT_NEAR(x[1], 0.75, 1e-12);
}
