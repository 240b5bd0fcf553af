#pragma once

#include <vector>

#include "lensless/optics.hpp"
#include "lensless/tensor.hpp"

namespace lensless {

struct WienerConfig {
  /// Noise-related regularizer added to |H|^2. 50000 is the low-noise
  /// preset and 80000 the high-noise one for raw-scale PSFs.
  double lambda = 50000.0;
  /// When false, the first PSF plane is used for every channel.
  bool per_channel = true;
  /// The PSF is never trained here; recorded so configs say so explicitly.
  bool psf_frozen = true;
};

/// x = IFFT(FFT(b) conj(FFT(h)) / (lambda + |FFT(h)|^2)), per channel, real part.
///
/// Runs on the zero-padded (M+h-1) x (N+w-1) grid with the PSF centred at
/// the origin, then crops to the measurement window. Throws DataError when
/// lambda is zero and the OTF has a zero bin.
Tensor wiener_deconv(const Tensor& measurement, const Psf& psf, const WienerConfig& config);

/// Range component x+ = H^+ H x with the regularized inverse H^+ above,
/// where H is the uncropped linear convolution.
Tensor range_project(const Tensor& scene, const Psf& psf, const WienerConfig& config);

enum class AdmmPrior { Nonnegativity, TotalVariation };

struct AdmmConfig {
  std::size_t iterations = 100;
  double rho = 0.5;
  AdmmPrior prior = AdmmPrior::Nonnegativity;
  double tv_weight = 1e-4;

  void validate() const;
};

struct AdmmResult {
  Tensor image;
  /// ||C H x_k - b|| after each iteration.
  std::vector<double> residuals;
};

/// Scaled-form ADMM for 0.5 ||C H x - b||^2 + prior, with splits v = Hx,
/// w = x (non-negativity) and, for TV, u = grad x. The x-update is solved
/// exactly in the frequency domain on the padded grid.
AdmmResult admm_reconstruct(const Tensor& measurement, const Psf& psf, const AdmmConfig& config);

struct Roi {
  std::size_t top = 0, left = 0, height = 0, width = 0;
};

/// Centred window with offsets floor((dim - size) / 2).
Roi central_roi(std::size_t rows, std::size_t cols, std::size_t height, std::size_t width);
/// Window `inner` taken relative to `outer`.
Roi compose_roi(const Roi& outer, const Roi& inner);
Tensor crop_roi(const Tensor& image, const Roi& roi);

}  // namespace lensless
