#include "lensless/sensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "lensless/errors.hpp"

namespace lensless {

void SensorParams::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("sensor: " + what); };
  if (!(photon_scale > 0.0)) fail("photon scale K must be > 0");
  if (!(quantum_efficiency > 0.0 && quantum_efficiency <= 1.0)) fail("quantum efficiency must be in (0, 1]");
  if (!(read_noise_std >= 0.0)) fail("read noise std must be >= 0");
  if (!(adc_gain > 0.0)) fail("ADC gain must be > 0");
  if (!(adc_baseline >= 0.0)) fail("ADC baseline must be >= 0");
  if (bit_depth < 1 || bit_depth > 16) fail("bit depth must be in [1, 16]");
  if (!(poisson_crossover > 0.0)) fail("Poisson crossover must be > 0");
}

double SensorParams::max_code() const { return std::ldexp(1.0, bit_depth) - 1.0; }

SensorParams SensorParams::with_exposure(double exposure_s, double reference_s) const {
  if (!(exposure_s > 0.0) || !(reference_s > 0.0)) {
    throw std::invalid_argument("sensor: exposure times must be positive");
  }
  SensorParams p = *this;
  p.photon_scale *= exposure_s / reference_s;
  return p;
}

Tensor photon_flux(const Tensor& intensity, const SensorParams& params) {
  params.validate();
  Tensor out = intensity;
  for (double& v : out.data()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw DataError("photon_flux: intensity " + std::to_string(v) + " outside [0, 1]");
    }
    v *= params.photon_scale;
  }
  return out;
}

std::uint64_t sample_poisson(double mean, Rng& rng, double crossover) {
  if (!(mean >= 0.0) || !std::isfinite(mean)) {
    throw DataError("sample_poisson: invalid mean " + std::to_string(mean));
  }
  if (mean == 0.0) return 0;
  if (mean < crossover) {
    const double limit = std::exp(-mean);
    std::uint64_t k = 0;
    double p = rng.uniform();
    while (p > limit) {
      ++k;
      p *= rng.uniform();
    }
    return k;
  }
  const double draw = std::round(mean + std::sqrt(mean) * rng.normal());
  return draw <= 0.0 ? 0 : static_cast<std::uint64_t>(draw);
}

Tensor capture_electrons(const Tensor& photon_mean, const SensorParams& params, Rng& rng) {
  params.validate();
  Tensor out = photon_mean;
  for (double& v : out.data()) {
    if (!(v >= 0.0)) throw DataError("capture_electrons: negative photon mean");
    v = params.quantum_efficiency *
        static_cast<double>(sample_poisson(v, rng, params.poisson_crossover));
  }
  return out;
}

Tensor add_read_noise(const Tensor& electrons, const SensorParams& params, Rng& rng) {
  params.validate();
  Tensor out = electrons;
  if (params.read_noise_std == 0.0) return out;
  for (double& v : out.data()) v += params.read_noise_std * rng.normal();
  return out;
}

Tensor digitize(const Tensor& signal, const SensorParams& params) {
  Tensor out = signal;
  for (double& v : out.data()) v = params.adc_gain * v + params.adc_baseline;
  return out;
}

Tensor quantize(const Tensor& adu, const SensorParams& params) {
  const double top = params.max_code();
  Tensor out = adu;
  for (double& v : out.data()) {
    // std::round is half away from zero.
    const double clamped = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, top);
    v = std::round(clamped);
  }
  return out;
}

Tensor simulate_capture(const Tensor& intensity, const SensorParams& params, Rng& rng) {
  Tensor photons = photon_flux(intensity, params);
  Tensor electrons = capture_electrons(photons, params, rng);
  Tensor noisy = add_read_noise(electrons, params, rng);
  return quantize(digitize(noisy, params), params);
}

double expected_adu(double intensity, const SensorParams& params) {
  return params.adc_gain * params.quantum_efficiency * params.photon_scale * intensity +
         params.adc_baseline;
}

Tensor normalize_capture(const Tensor& capture, const SensorParams& params) {
  params.validate();
  const double gain = params.adc_gain * params.quantum_efficiency * params.photon_scale;
  Tensor out = capture;
  for (double& v : out.data()) v = (v - params.adc_baseline) / gain;
  return out;
}

}  // namespace lensless
