#include "lensless/optics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "lensless/errors.hpp"
#include "lensless/fft.hpp"
#include "lensless/rng.hpp"

namespace lensless {

Psf Psf::from_tensor(Tensor kernel, double pixel_pitch_mm) {
  if (kernel.empty()) throw DataError("PSF is empty");
  if (kernel.rank() != 2 && kernel.rank() != 3) {
    throw DataError("PSF must have rank 2 or 3, got " + shape_to_string(kernel.shape()));
  }
  const std::size_t planes = kernel.rank() == 3 ? kernel.dim(0) : 1;
  const std::size_t plane = kernel.size() / planes;
  for (std::size_t p = 0; p < planes; ++p) {
    double total = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      const double v = kernel[p * plane + i];
      if (!(v >= 0.0) || !std::isfinite(v)) throw DataError("PSF has negative or non-finite entries");
      total += v;
    }
    if (!(total > 0.0)) throw DataError("PSF plane " + std::to_string(p) + " sums to zero");
    for (std::size_t i = 0; i < plane; ++i) kernel[p * plane + i] /= total;
  }
  Psf psf;
  psf.kernel_ = std::move(kernel);
  psf.pixel_pitch_mm_ = pixel_pitch_mm;
  return psf;
}

std::span<const double> Psf::plane(std::size_t channel) const {
  const std::size_t n = height() * width();
  const std::size_t p = planes() == 1 ? 0 : channel;
  if (p >= planes()) throw std::out_of_range("PSF has no plane for channel " + std::to_string(channel));
  return kernel_.data().subspan(p * n, n);
}

Psf delta_psf(std::size_t size) {
  Tensor k({size, size}, 0.0);
  k[(size / 2) * size + size / 2] = 1.0;
  return Psf::from_tensor(std::move(k));
}

Psf gaussian_psf(std::size_t size, double sigma) {
  Tensor k({size, size}, 0.0);
  const double c = static_cast<double>(size / 2);
  for (std::size_t r = 0; r < size; ++r)
    for (std::size_t q = 0; q < size; ++q) {
      const double dy = static_cast<double>(r) - c, dx = static_cast<double>(q) - c;
      k[r * size + q] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
    }
  return Psf::from_tensor(std::move(k));
}

Psf random_mask_psf(std::size_t size, double density, std::uint64_t seed) {
  Rng rng(seed);
  Tensor mask({size, size}, 0.0);
  for (double& v : mask.data()) v = rng.uniform() < density ? 1.0 : 0.0;
  mask[(size / 2) * size + size / 2] = 1.0;
  // Mild 3-tap smoothing, like diffraction blur of the mask pattern.
  Tensor k({size, size}, 0.0);
  for (std::size_t r = 0; r < size; ++r)
    for (std::size_t q = 0; q < size; ++q) {
      double acc = 0.0;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dq = -1; dq <= 1; ++dq) {
          const auto rr = static_cast<std::ptrdiff_t>(r) + dr;
          const auto qq = static_cast<std::ptrdiff_t>(q) + dq;
          if (rr < 0 || qq < 0 || rr >= static_cast<std::ptrdiff_t>(size) ||
              qq >= static_cast<std::ptrdiff_t>(size))
            continue;
          const double w = (dr == 0 && dq == 0) ? 1.0 : 0.15;
          acc += w * mask[static_cast<std::size_t>(rr) * size + static_cast<std::size_t>(qq)];
        }
      k[r * size + q] = acc;
    }
  return Psf::from_tensor(std::move(k));
}

namespace {

struct Planes {
  std::size_t channels, rows, cols;
};

Planes planes_of(const Tensor& image, const char* op) {
  if (image.rank() == 2) return {1, image.dim(0), image.dim(1)};
  if (image.rank() == 3) return {image.dim(0), image.dim(1), image.dim(2)};
  throw std::invalid_argument(std::string(op) + ": image must be [H,W] or [C,H,W], got " +
                              shape_to_string(image.shape()));
}

void check_psf_channels(const Psf& psf, std::size_t channels, const char* op) {
  if (psf.planes() != 1 && psf.planes() != channels) {
    throw std::invalid_argument(std::string(op) + ": PSF has " + std::to_string(psf.planes()) +
                                " planes but image has " + std::to_string(channels) + " channels");
  }
}

Tensor make_output(const Tensor& like, std::size_t channels, std::size_t rows, std::size_t cols) {
  return like.rank() == 2 ? Tensor({rows, cols}, 0.0) : Tensor({channels, rows, cols}, 0.0);
}

}  // namespace

Tensor convolve_full(const Tensor& scene, const Psf& psf) {
  const Planes p = planes_of(scene, "convolve_full");
  check_psf_channels(psf, p.channels, "convolve_full");
  const std::size_t kh = psf.height(), kw = psf.width();
  const std::size_t gr = p.rows + kh - 1, gc = p.cols + kw - 1;
  RealFft2d fft(gr, gc);
  Tensor out = make_output(scene, p.channels, gr, gc);
  const std::size_t plane = p.rows * p.cols;
  for (std::size_t c = 0; c < p.channels; ++c) {
    const Spectrum xs =
        fft.forward(embed_plane(scene.data().subspan(c * plane, plane), p.rows, p.cols, gr, gc, 0, 0));
    Spectrum hs = fft.forward(embed_plane(psf.plane(c), kh, kw, gr, gc, 0, 0));
    for (std::size_t i = 0; i < hs.size(); ++i) hs[i] *= xs[i];
    const std::vector<double> y = fft.inverse(hs);
    std::copy(y.begin(), y.end(), out.data().begin() + static_cast<std::ptrdiff_t>(c * gr * gc));
  }
  return out;
}

Tensor convolve_fft(const Tensor& scene, const Psf& psf) {
  const Planes p = planes_of(scene, "convolve_fft");
  const Tensor full = convolve_full(scene, psf);
  const std::size_t gr = p.rows + psf.height() - 1, gc = p.cols + psf.width() - 1;
  Tensor out = make_output(scene, p.channels, p.rows, p.cols);
  for (std::size_t c = 0; c < p.channels; ++c) {
    const auto win = extract_plane(full.data().subspan(c * gr * gc, gr * gc), gc, psf.height() / 2,
                                   psf.width() / 2, p.rows, p.cols);
    std::copy(win.begin(), win.end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(c * p.rows * p.cols));
  }
  return out;
}

Tensor adjoint_apply(const Tensor& measurement, const Psf& psf) {
  const Planes p = planes_of(measurement, "adjoint_apply");
  check_psf_channels(psf, p.channels, "adjoint_apply");
  const std::size_t kh = psf.height(), kw = psf.width();
  const std::size_t gr = p.rows + kh - 1, gc = p.cols + kw - 1;
  RealFft2d fft(gr, gc);
  Tensor out = make_output(measurement, p.channels, p.rows, p.cols);
  const std::size_t plane = p.rows * p.cols;
  for (std::size_t c = 0; c < p.channels; ++c) {
    const Spectrum bs = fft.forward(embed_plane(measurement.data().subspan(c * plane, plane), p.rows,
                                                p.cols, gr, gc, static_cast<std::ptrdiff_t>(kh / 2),
                                                static_cast<std::ptrdiff_t>(kw / 2)));
    Spectrum hs = fft.forward(embed_plane(psf.plane(c), kh, kw, gr, gc, 0, 0));
    for (std::size_t i = 0; i < hs.size(); ++i) hs[i] = std::conj(hs[i]) * bs[i];
    const auto y = fft.inverse(hs);
    const auto win = extract_plane(y, gc, 0, 0, p.rows, p.cols);
    std::copy(win.begin(), win.end(), out.data().begin() + static_cast<std::ptrdiff_t>(c * plane));
  }
  return out;
}

BayerMosaic BayerMosaic::from_planes(Tensor planes) {
  if (planes.rank() != 3 || planes.dim(0) != 4) {
    throw DataError("Bayer planes must be [4,h,w], got " + shape_to_string(planes.shape()));
  }
  BayerMosaic m;
  m.rows = planes.dim(1) * 2;
  m.cols = planes.dim(2) * 2;
  m.planes = std::move(planes);
  return m;
}

namespace {

// Plane index and (row, col) parity for RGGB: R(0,0) Gr(0,1) B(1,1) Gb(1,0).
constexpr std::size_t kPlaneRow[4] = {0, 0, 1, 1};
constexpr std::size_t kPlaneCol[4] = {0, 1, 1, 0};

}  // namespace

Tensor BayerMosaic::raw() const {
  const std::size_t h = rows / 2, w = cols / 2;
  Tensor out({rows, cols}, 0.0);
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c)
        out[(2 * r + kPlaneRow[p]) * cols + 2 * c + kPlaneCol[p]] = planes[(p * h + r) * w + c];
  return out;
}

BayerMosaic split_raw(const Tensor& raw) {
  if (raw.rank() != 2) throw DataError("raw frame must be [H,W]");
  const std::size_t rows = raw.dim(0), cols = raw.dim(1);
  if (rows % 2 || cols % 2) {
    throw DataError("Bayer mosaic dims must be even, got " + shape_to_string(raw.shape()));
  }
  const std::size_t h = rows / 2, w = cols / 2;
  Tensor planes({4, h, w}, 0.0);
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c)
        planes[(p * h + r) * w + c] = raw[(2 * r + kPlaneRow[p]) * cols + 2 * c + kPlaneCol[p]];
  return BayerMosaic::from_planes(std::move(planes));
}

BayerMosaic mosaic(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) {
    throw DataError("mosaic expects [3,H,W], got " + shape_to_string(rgb.shape()));
  }
  const std::size_t rows = rgb.dim(1), cols = rgb.dim(2);
  if (rows % 2 || cols % 2) {
    throw DataError("Bayer mosaic dims must be even, got " + shape_to_string(rgb.shape()));
  }
  Tensor raw({rows, cols}, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t channel = (r % 2 == 0 && c % 2 == 0) ? 0 : (r % 2 == 1 && c % 2 == 1) ? 2 : 1;
      raw[r * cols + c] = rgb[(channel * rows + r) * cols + c];
    }
  return split_raw(raw);
}

Tensor demosaic(const BayerMosaic& bayer) {
  const std::size_t rows = bayer.rows, cols = bayer.cols;
  if (rows % 2 || cols % 2 || rows == 0) throw DataError("Bayer mosaic dims must be even");
  const Tensor raw = bayer.raw();
  // Channel membership of each site.
  auto channel_at = [](std::size_t r, std::size_t c) -> std::size_t {
    if (r % 2 == 0 && c % 2 == 0) return 0;
    if (r % 2 == 1 && c % 2 == 1) return 2;
    return 1;
  };
  static constexpr double kRb[3][3] = {{1, 2, 1}, {2, 4, 2}, {1, 2, 1}};
  static constexpr double kG[3][3] = {{0, 1, 0}, {1, 4, 1}, {0, 1, 0}};
  Tensor out({3, rows, cols}, 0.0);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    const auto& k = ch == 1 ? kG : kRb;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        if (channel_at(r, c) == ch) {
          out[(ch * rows + r) * cols + c] = raw[r * cols + c];
          continue;
        }
        double num = 0.0, den = 0.0;
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            const auto rr = static_cast<std::ptrdiff_t>(r) + dr;
            const auto cc = static_cast<std::ptrdiff_t>(c) + dc;
            if (rr < 0 || cc < 0 || rr >= static_cast<std::ptrdiff_t>(rows) ||
                cc >= static_cast<std::ptrdiff_t>(cols))
              continue;
            const auto ur = static_cast<std::size_t>(rr), uc = static_cast<std::size_t>(cc);
            if (channel_at(ur, uc) != ch) continue;
            const double w = k[dr + 1][dc + 1];
            num += w * raw[ur * cols + uc];
            den += w;
          }
        out[(ch * rows + r) * cols + c] = num / den;
      }
  }
  return out;
}

}  // namespace lensless
