#include "lensless/fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cstring>
#include <mutex>
#include <stdexcept>
#include <utility>

namespace lensless {
namespace {

// FFTW's planner is not thread-safe.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

RealFft2d::RealFft2d(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("RealFft2d: empty size");
  std::lock_guard lock(planner_mutex());
  real_ = fftw_alloc_real(rows * cols);
  complex_ = fftw_alloc_complex(rows * (cols / 2 + 1));
  auto* c = static_cast<fftw_complex*>(complex_);
  forward_plan_ = fftw_plan_dft_r2c_2d(static_cast<int>(rows), static_cast<int>(cols), real_, c,
                                       FFTW_ESTIMATE);
  inverse_plan_ = fftw_plan_dft_c2r_2d(static_cast<int>(rows), static_cast<int>(cols), c, real_,
                                       FFTW_ESTIMATE);
  if (!forward_plan_ || !inverse_plan_) throw std::runtime_error("FFTW planning failed");
}

RealFft2d::RealFft2d(RealFft2d&& other) noexcept
    : rows_(other.rows_),
      cols_(other.cols_),
      real_(std::exchange(other.real_, nullptr)),
      complex_(std::exchange(other.complex_, nullptr)),
      forward_plan_(std::exchange(other.forward_plan_, nullptr)),
      inverse_plan_(std::exchange(other.inverse_plan_, nullptr)) {}

RealFft2d::~RealFft2d() {
  std::lock_guard lock(planner_mutex());
  if (forward_plan_) fftw_destroy_plan(static_cast<fftw_plan>(forward_plan_));
  if (inverse_plan_) fftw_destroy_plan(static_cast<fftw_plan>(inverse_plan_));
  if (real_) fftw_free(real_);
  if (complex_) fftw_free(complex_);
}

Spectrum RealFft2d::forward(std::span<const double> image) const {
  if (image.size() != rows_ * cols_) throw std::invalid_argument("RealFft2d::forward: size mismatch");
  std::copy(image.begin(), image.end(), real_);
  fftw_execute(static_cast<fftw_plan>(forward_plan_));
  const auto* c = static_cast<const fftw_complex*>(complex_);
  Spectrum out(spectrum_size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {c[i][0], c[i][1]};
  return out;
}

std::vector<double> RealFft2d::inverse(std::span<const std::complex<double>> spectrum) const {
  if (spectrum.size() != spectrum_size()) {
    throw std::invalid_argument("RealFft2d::inverse: size mismatch");
  }
  auto* c = static_cast<fftw_complex*>(complex_);
  for (std::size_t i = 0; i < spectrum.size(); ++i) {
    c[i][0] = spectrum[i].real();
    c[i][1] = spectrum[i].imag();
  }
  fftw_execute(static_cast<fftw_plan>(inverse_plan_));
  const double norm = 1.0 / static_cast<double>(rows_ * cols_);
  std::vector<double> out(rows_ * cols_);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = real_[i] * norm;
  return out;
}

std::vector<double> embed_plane(std::span<const double> plane, std::size_t rows, std::size_t cols,
                                std::size_t grid_rows, std::size_t grid_cols, std::ptrdiff_t top,
                                std::ptrdiff_t left) {
  if (rows > grid_rows || cols > grid_cols) throw std::invalid_argument("embed_plane: grid too small");
  std::vector<double> grid(grid_rows * grid_cols, 0.0);
  const auto gr = static_cast<std::ptrdiff_t>(grid_rows);
  const auto gc = static_cast<std::ptrdiff_t>(grid_cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::ptrdiff_t rr = ((static_cast<std::ptrdiff_t>(r) + top) % gr + gr) % gr;
    for (std::size_t c = 0; c < cols; ++c) {
      const std::ptrdiff_t cc = ((static_cast<std::ptrdiff_t>(c) + left) % gc + gc) % gc;
      grid[static_cast<std::size_t>(rr * gc + cc)] += plane[r * cols + c];
    }
  }
  return grid;
}

std::vector<double> extract_plane(std::span<const double> grid, std::size_t grid_cols,
                                  std::size_t top, std::size_t left, std::size_t rows,
                                  std::size_t cols) {
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(&grid[(top + r) * grid_cols + left], cols, &out[r * cols]);
  }
  return out;
}

}  // namespace lensless
