#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace lensless {

using Spectrum = std::vector<std::complex<double>>;

/// 2D real-to-complex transform of a fixed size, backed by FFTW.
///
/// Spectra use FFTW's half layout: rows x (cols/2 + 1). inverse() is
/// normalized so that inverse(forward(x)) == x.
class RealFft2d {
 public:
  RealFft2d(std::size_t rows, std::size_t cols);
  ~RealFft2d();
  RealFft2d(const RealFft2d&) = delete;
  RealFft2d& operator=(const RealFft2d&) = delete;
  RealFft2d(RealFft2d&& other) noexcept;
  RealFft2d& operator=(RealFft2d&&) = delete;

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t spectrum_cols() const noexcept { return cols_ / 2 + 1; }
  std::size_t spectrum_size() const noexcept { return rows_ * spectrum_cols(); }

  Spectrum forward(std::span<const double> image) const;
  std::vector<double> inverse(std::span<const std::complex<double>> spectrum) const;

 private:
  std::size_t rows_, cols_;
  double* real_ = nullptr;
  void* complex_ = nullptr;
  void* forward_plan_ = nullptr;
  void* inverse_plan_ = nullptr;
};

/// Writes a rows x cols plane into a zeroed grid_rows x grid_cols buffer at
/// (top, left), wrapping indices modulo the grid size.
std::vector<double> embed_plane(std::span<const double> plane, std::size_t rows, std::size_t cols,
                                std::size_t grid_rows, std::size_t grid_cols, std::ptrdiff_t top,
                                std::ptrdiff_t left);

/// Copies the rows x cols window at (top, left) out of a grid.
std::vector<double> extract_plane(std::span<const double> grid, std::size_t grid_cols,
                                  std::size_t top, std::size_t left, std::size_t rows,
                                  std::size_t cols);

}  // namespace lensless
