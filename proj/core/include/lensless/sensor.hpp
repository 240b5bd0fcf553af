#pragma once

#include <cstdint>

#include "lensless/rng.hpp"
#include "lensless/tensor.hpp"

namespace lensless {

/// Constants of the low-light capture chain. Defaults are the camera values
/// used for the simulated dataset (1000 photons at full intensity, QE 0.7,
/// 2.63 e- read noise, 0.23 ADU/e-, 4.48 ADU baseline, 8 bits).
struct SensorParams {
  double photon_scale = 1000.0;       // K
  double quantum_efficiency = 0.7;    // eta
  double read_noise_std = 2.63;       // sigma, electrons
  double adc_gain = 0.23;             // d, ADU per electron
  double adc_baseline = 4.48;         // b_l, ADU
  int bit_depth = 8;
  /// Poisson means below this use exact sampling, above it N(mean, mean).
  double poisson_crossover = 30.0;

  void validate() const;
  double max_code() const;

  /// Exposure as a multiplicative factor on K relative to a reference time.
  SensorParams with_exposure(double exposure_s, double reference_s = 0.7) const;
};

/// b_p = K x. Intensities must lie in [0, 1].
Tensor photon_flux(const Tensor& intensity, const SensorParams& params);

/// b_e = eta * Poisson(b_p), drawn independently per element in buffer order.
Tensor capture_electrons(const Tensor& photon_mean, const SensorParams& params, Rng& rng);

/// b_r = b_e + n, n ~ N(0, sigma^2).
Tensor add_read_noise(const Tensor& electrons, const SensorParams& params, Rng& rng);

/// b_a = d b_r + b_l.
Tensor digitize(const Tensor& signal, const SensorParams& params);

/// Clamp to [0, 2^bits - 1] and round half away from zero.
Tensor quantize(const Tensor& adu, const SensorParams& params);

/// Full chain: quantize(digitize(add_read_noise(capture_electrons(photon_flux(x))))).
Tensor simulate_capture(const Tensor& intensity, const SensorParams& params, Rng& rng);

/// Poisson draw: Knuth's product method below `crossover`, rounded and
/// clamped Gaussian approximation at or above it.
std::uint64_t sample_poisson(double mean, Rng& rng, double crossover = 30.0);

/// Expected pre-clamp ADU of a constant intensity: d * eta * K * x + b_l.
double expected_adu(double intensity, const SensorParams& params);

/// Maps captured ADU back to intensity units: (b - b_l) / (d * eta * K).
Tensor normalize_capture(const Tensor& capture, const SensorParams& params);

}  // namespace lensless
