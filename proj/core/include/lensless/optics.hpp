#pragma once

#include <cstdint>

#include "lensless/tensor.hpp"

namespace lensless {

/// Calibrated point-spread function, non-negative and normalized to unit sum
/// per plane. A rank-2 kernel is shared by all image channels; a rank-3
/// kernel [C,h,w] supplies one plane per channel.
class Psf {
 public:
  static Psf from_tensor(Tensor kernel, double pixel_pitch_mm = 0.0);

  const Tensor& kernel() const noexcept { return kernel_; }
  std::size_t height() const { return kernel_.dim(kernel_.rank() - 2); }
  std::size_t width() const { return kernel_.dim(kernel_.rank() - 1); }
  /// Number of planes (1 for a shared PSF).
  std::size_t planes() const { return kernel_.rank() == 3 ? kernel_.dim(0) : 1; }
  double pixel_pitch_mm() const noexcept { return pixel_pitch_mm_; }

  /// The [h,w] plane applied to image channel `channel`.
  std::span<const double> plane(std::size_t channel) const;

 private:
  Tensor kernel_;
  double pixel_pitch_mm_ = 0.0;
};

Psf delta_psf(std::size_t size);
Psf gaussian_psf(std::size_t size, double sigma);
/// Blurred random binary mask, a stand-in for an amplitude-mask lensless PSF.
Psf random_mask_psf(std::size_t size, double density, std::uint64_t seed);

/// Linear (zero-padded, non-circular) convolution b = h * x evaluated with
/// FFTs on the (H+h-1) x (W+w-1) grid and cropped back to the H x W sensor
/// window starting at (h/2, w/2). Accepts [H,W] or [C,H,W].
Tensor convolve_fft(const Tensor& scene, const Psf& psf);

/// Uncropped linear convolution, [C, H+h-1, W+w-1] (or rank-2 equivalent).
Tensor convolve_full(const Tensor& scene, const Psf& psf);

/// Adjoint of convolve_fft: correlation with the PSF, so that
/// <convolve_fft(x), y> == <x, adjoint_apply(y)>.
Tensor adjoint_apply(const Tensor& measurement, const Psf& psf);

/// Bayer planes ordered (R, Gr, B, Gb) from an RGGB mosaic.
struct BayerMosaic {
  Tensor planes;  // [4, rows/2, cols/2]
  std::size_t rows = 0;
  std::size_t cols = 0;

  static BayerMosaic from_planes(Tensor planes);
  /// Interleaved single-plane raw frame [rows, cols].
  Tensor raw() const;
};

/// Samples an RGB image [3,H,W] on the RGGB pattern. H and W must be even.
BayerMosaic mosaic(const Tensor& rgb);
/// Raw frame [H,W] to planes; H and W must be even.
BayerMosaic split_raw(const Tensor& raw);
/// Bilinear demosaic (normalized convolution of each sparse channel).
Tensor demosaic(const BayerMosaic& bayer);

}  // namespace lensless
