#pragma once

#include <filesystem>

#include "lensless/optics.hpp"
#include "lensless/tensor.hpp"

namespace lensless {

/// Reads an 8- or 16-bit grayscale/RGB PNG as [C,H,W] scaled to [0, 1].
Tensor read_png(const std::filesystem::path& path);
/// Writes [H,W] or [C,H,W] (C = 1 or 3) clamped to [0, 1] at 8 or 16 bits.
void write_png(const std::filesystem::path& path, const Tensor& image, int bit_depth = 8);

/// PNG or LLT1 by extension.
Tensor load_image(const std::filesystem::path& path);
void save_image(const std::filesystem::path& path, const Tensor& image);

/// PSF from LLT1 ([h,w] or [C,h,w]) or PNG; single-channel PNGs load as [h,w].
Psf load_psf(const std::filesystem::path& path);

}  // namespace lensless
