#include "lensless/recon.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "lensless/errors.hpp"
#include "lensless/fft.hpp"

namespace lensless {
namespace {

struct Layout {
  std::size_t channels, rows, cols;
};

Layout layout_of(const Tensor& image, const char* op) {
  if (image.rank() == 2) return {1, image.dim(0), image.dim(1)};
  if (image.rank() == 3) return {image.dim(0), image.dim(1), image.dim(2)};
  throw std::invalid_argument(std::string(op) + ": image must be [H,W] or [C,H,W]");
}

std::span<const double> psf_plane_for(const Psf& psf, std::size_t channel, bool per_channel) {
  return psf.plane(per_channel ? channel : 0);
}

// OTF of the PSF centred at the origin of a grid_rows x grid_cols grid.
Spectrum centred_otf(const RealFft2d& fft, std::span<const double> plane, std::size_t kh,
                     std::size_t kw) {
  return fft.forward(embed_plane(plane, kh, kw, fft.rows(), fft.cols(),
                                 -static_cast<std::ptrdiff_t>(kh / 2),
                                 -static_cast<std::ptrdiff_t>(kw / 2)));
}

void check_channels(const Psf& psf, std::size_t channels, const char* op) {
  if (psf.planes() != 1 && psf.planes() != channels) {
    throw std::invalid_argument(std::string(op) + ": PSF plane count does not match channels");
  }
}

}  // namespace

Tensor wiener_deconv(const Tensor& measurement, const Psf& psf, const WienerConfig& config) {
  if (!(config.lambda >= 0.0)) throw std::invalid_argument("wiener: lambda must be >= 0");
  const Layout l = layout_of(measurement, "wiener_deconv");
  check_channels(psf, l.channels, "wiener_deconv");
  const std::size_t kh = psf.height(), kw = psf.width();
  const std::size_t gr = l.rows + kh - 1, gc = l.cols + kw - 1;
  RealFft2d fft(gr, gc);
  Tensor out = measurement;
  const std::size_t plane = l.rows * l.cols;
  for (std::size_t c = 0; c < l.channels; ++c) {
    const Spectrum H = centred_otf(fft, psf_plane_for(psf, c, config.per_channel), kh, kw);
    Spectrum B =
        fft.forward(embed_plane(measurement.data().subspan(c * plane, plane), l.rows, l.cols, gr, gc, 0, 0));
    for (std::size_t i = 0; i < B.size(); ++i) {
      const double power = std::norm(H[i]);
      const double denom = config.lambda + power;
      if (config.lambda == 0.0 && power <= 1e-30) {
        throw DataError("singular inverse; increase lambda");
      }
      B[i] = B[i] * std::conj(H[i]) / denom;
    }
    const auto x = fft.inverse(B);
    const auto win = extract_plane(x, gc, 0, 0, l.rows, l.cols);
    std::copy(win.begin(), win.end(), out.data().begin() + static_cast<std::ptrdiff_t>(c * plane));
  }
  if (!out.all_finite()) throw NumericalError("wiener_deconv produced non-finite values");
  return out;
}

Tensor range_project(const Tensor& scene, const Psf& psf, const WienerConfig& config) {
  if (!(config.lambda >= 0.0)) throw std::invalid_argument("range_project: lambda must be >= 0");
  const Layout l = layout_of(scene, "range_project");
  check_channels(psf, l.channels, "range_project");
  const std::size_t kh = psf.height(), kw = psf.width();
  const std::size_t gr = l.rows + kh - 1, gc = l.cols + kw - 1;
  RealFft2d fft(gr, gc);
  Tensor out = scene;
  const std::size_t plane = l.rows * l.cols;
  for (std::size_t c = 0; c < l.channels; ++c) {
    const Spectrum H = centred_otf(fft, psf_plane_for(psf, c, config.per_channel), kh, kw);
    Spectrum X =
        fft.forward(embed_plane(scene.data().subspan(c * plane, plane), l.rows, l.cols, gr, gc, 0, 0));
    for (std::size_t i = 0; i < X.size(); ++i) {
      const double power = std::norm(H[i]);
      const double gain = config.lambda == 0.0 ? (power > 0.0 ? 1.0 : 0.0)
                                               : power / (config.lambda + power);
      X[i] *= gain;
    }
    const auto x = fft.inverse(X);
    const auto win = extract_plane(x, gc, 0, 0, l.rows, l.cols);
    std::copy(win.begin(), win.end(), out.data().begin() + static_cast<std::ptrdiff_t>(c * plane));
  }
  return out;
}

void AdmmConfig::validate() const {
  if (iterations < 1) throw std::invalid_argument("admm: iterations must be >= 1");
  if (!(rho > 0.0)) throw std::invalid_argument("admm: rho must be > 0");
  if (!(tv_weight >= 0.0)) throw std::invalid_argument("admm: TV weight must be >= 0");
}

namespace {

// Circular forward differences along columns (dx) and rows (dy).
void gradient(const std::vector<double>& x, std::size_t rows, std::size_t cols,
              std::vector<double>& dx, std::vector<double>& dy) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = x[r * cols + c];
      dx[r * cols + c] = x[r * cols + (c + 1) % cols] - v;
      dy[r * cols + c] = x[((r + 1) % rows) * cols + c] - v;
    }
}

// Adjoint of gradient().
void gradient_adjoint(const std::vector<double>& dx, const std::vector<double>& dy,
                      std::size_t rows, std::size_t cols, std::vector<double>& out) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t left = r * cols + (c + cols - 1) % cols;
      const std::size_t up = ((r + rows - 1) % rows) * cols + c;
      const std::size_t i = r * cols + c;
      out[i] = (dx[left] - dx[i]) + (dy[up] - dy[i]);
    }
}

double soft(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

}  // namespace

AdmmResult admm_reconstruct(const Tensor& measurement, const Psf& psf, const AdmmConfig& config) {
  config.validate();
  const Layout l = layout_of(measurement, "admm_reconstruct");
  check_channels(psf, l.channels, "admm_reconstruct");
  const bool use_tv = config.prior == AdmmPrior::TotalVariation;
  const std::size_t kh = psf.height(), kw = psf.width();
  const std::size_t gr = l.rows + kh - 1, gc = l.cols + kw - 1, gn = gr * gc;
  const std::size_t plane = l.rows * l.cols;
  const double mu = config.rho;
  RealFft2d fft(gr, gc);

  // Spectrum of the circular Laplacian Psi^T Psi.
  std::vector<double> lap_kernel(gn, 0.0);
  lap_kernel[0] = 4.0;
  lap_kernel[1 % gc] -= 1.0;
  lap_kernel[gc - 1] -= 1.0;
  lap_kernel[(1 % gr) * gc] -= 1.0;
  lap_kernel[(gr - 1) * gc] -= 1.0;
  const Spectrum lap = fft.forward(lap_kernel);

  struct ChannelState {
    Spectrum H;
    std::vector<double> x, v, w, ux, uy, xi, eta_x, eta_y, rho_d, ctb;
  };
  std::vector<ChannelState> states(l.channels);
  double initial = 0.0;
  for (std::size_t c = 0; c < l.channels; ++c) {
    ChannelState& s = states[c];
    s.H = centred_otf(fft, psf.plane(c), kh, kw);
    for (auto* vec : {&s.x, &s.v, &s.w, &s.ux, &s.uy, &s.xi, &s.eta_x, &s.eta_y, &s.rho_d}) {
      vec->assign(gn, 0.0);
    }
    s.ctb = embed_plane(measurement.data().subspan(c * plane, plane), l.rows, l.cols, gr, gc, 0, 0);
    for (double v : s.ctb) initial += v * v;
  }
  initial = std::sqrt(initial);

  auto apply = [&](const Spectrum& H, const std::vector<double>& x, bool adjoint) {
    Spectrum X = fft.forward(x);
    for (std::size_t i = 0; i < X.size(); ++i) X[i] *= adjoint ? std::conj(H[i]) : H[i];
    return fft.inverse(X);
  };
  auto in_window = [&](std::size_t i) { return (i / gc) < l.rows && (i % gc) < l.cols; };

  AdmmResult result;
  result.residuals.reserve(config.iterations);
  std::vector<double> gx(gn), gy(gn), rhs(gn), tmp(gn);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    double residual_sq = 0.0;
    for (ChannelState& s : states) {
      const std::vector<double> Hx = apply(s.H, s.x, false);
      // v: (C^T C + mu I) v = xi + mu H x + C^T b
      for (std::size_t i = 0; i < gn; ++i) {
        s.v[i] = (s.xi[i] + mu * Hx[i] + s.ctb[i]) / ((in_window(i) ? 1.0 : 0.0) + mu);
      }
      // w: projection onto the non-negative orthant.
      for (std::size_t i = 0; i < gn; ++i) s.w[i] = std::max(s.x[i] + s.rho_d[i] / mu, 0.0);
      if (use_tv) {
        gradient(s.x, gr, gc, gx, gy);
        const double t = config.tv_weight / mu;
        for (std::size_t i = 0; i < gn; ++i) {
          s.ux[i] = soft(gx[i] + s.eta_x[i] / mu, t);
          s.uy[i] = soft(gy[i] + s.eta_y[i] / mu, t);
        }
      }
      // x: (mu H^T H + mu Psi^T Psi + mu I) x = H^T(mu v - xi) + Psi^T(mu u - eta) + mu w - rho
      for (std::size_t i = 0; i < gn; ++i) tmp[i] = mu * s.v[i] - s.xi[i];
      const std::vector<double> hty = apply(s.H, tmp, true);
      for (std::size_t i = 0; i < gn; ++i) rhs[i] = hty[i] + mu * s.w[i] - s.rho_d[i];
      if (use_tv) {
        for (std::size_t i = 0; i < gn; ++i) {
          gx[i] = mu * s.ux[i] - s.eta_x[i];
          gy[i] = mu * s.uy[i] - s.eta_y[i];
        }
        gradient_adjoint(gx, gy, gr, gc, tmp);
        for (std::size_t i = 0; i < gn; ++i) rhs[i] += tmp[i];
      }
      Spectrum R = fft.forward(rhs);
      for (std::size_t i = 0; i < R.size(); ++i) {
        const double denom = mu * std::norm(s.H[i]) + (use_tv ? mu * lap[i].real() : 0.0) + mu;
        R[i] /= denom;
      }
      s.x = fft.inverse(R);
      // Dual ascent.
      const std::vector<double> Hx_new = apply(s.H, s.x, false);
      for (std::size_t i = 0; i < gn; ++i) {
        s.xi[i] += mu * (Hx_new[i] - s.v[i]);
        s.rho_d[i] += mu * (s.x[i] - s.w[i]);
        if (in_window(i)) {
          const double r = Hx_new[i] - s.ctb[i];
          residual_sq += r * r;
        }
      }
      if (use_tv) {
        gradient(s.x, gr, gc, gx, gy);
        for (std::size_t i = 0; i < gn; ++i) {
          s.eta_x[i] += mu * (gx[i] - s.ux[i]);
          s.eta_y[i] += mu * (gy[i] - s.uy[i]);
        }
      }
    }
    const double residual = std::sqrt(residual_sq);
    if (!std::isfinite(residual)) {
      throw NumericalError("admm: non-finite residual at iteration " + std::to_string(it + 1));
    }
    if (initial > 0.0 && residual > 1e6 * initial) {
      throw NumericalError("admm: diverged at iteration " + std::to_string(it + 1));
    }
    result.residuals.push_back(residual);
  }

  result.image = measurement;
  for (std::size_t c = 0; c < l.channels; ++c) {
    const auto win = extract_plane(states[c].x, gc, 0, 0, l.rows, l.cols);
    for (std::size_t i = 0; i < plane; ++i) result.image[c * plane + i] = std::max(win[i], 0.0);
  }
  return result;
}

Roi central_roi(std::size_t rows, std::size_t cols, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0 || height > rows || width > cols) {
    throw DataError("ROI " + std::to_string(height) + "x" + std::to_string(width) +
                    " does not fit image " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  return {(rows - height) / 2, (cols - width) / 2, height, width};
}

Roi compose_roi(const Roi& outer, const Roi& inner) {
  if (inner.top + inner.height > outer.height || inner.left + inner.width > outer.width) {
    throw DataError("inner ROI exceeds outer ROI");
  }
  return {outer.top + inner.top, outer.left + inner.left, inner.height, inner.width};
}

Tensor crop_roi(const Tensor& image, const Roi& roi) {
  const Layout l = layout_of(image, "crop_roi");
  if (roi.height == 0 || roi.width == 0 || roi.top + roi.height > l.rows ||
      roi.left + roi.width > l.cols) {
    throw DataError("ROI exceeds image " + shape_to_string(image.shape()));
  }
  Tensor out = image.rank() == 2 ? Tensor({roi.height, roi.width}, 0.0)
                                 : Tensor({l.channels, roi.height, roi.width}, 0.0);
  for (std::size_t c = 0; c < l.channels; ++c) {
    const auto win = extract_plane(image.data().subspan(c * l.rows * l.cols, l.rows * l.cols),
                                   l.cols, roi.top, roi.left, roi.height, roi.width);
    std::copy(win.begin(), win.end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(c * roi.height * roi.width));
  }
  return out;
}

}  // namespace lensless
