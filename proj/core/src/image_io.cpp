#include "lensless/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "lensless/errors.hpp"

namespace lensless {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

std::string lower_extension(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

void write_rows(std::FILE* file, const std::filesystem::path& path, std::size_t width, std::size_t height,
                std::size_t channels, int bit_depth, std::vector<png_byte>& buffer) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng initialisation failed");
  }
  const std::size_t stride = width * channels * static_cast<std::size_t>(bit_depth / 8);
  std::vector<png_bytep> rows(height);
  for (std::size_t r = 0; r < height; ++r) rows[r] = buffer.data() + r * stride;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("failed writing " + path.string());
  }
  png_init_io(png, file);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Tensor read_png(const std::filesystem::path& path) {
  File f(std::fopen(path.string().c_str(), "rb"));
  if (!f) throw DataError("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw DataError(path.string() + ": not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng initialisation failed");
  }
  std::vector<png_bytep> rows;
  std::vector<png_byte> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(path.string() + ": corrupt PNG");
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);  // little-endian 16-bit samples
  png_read_update_info(png, info);
  const std::size_t width = png_get_image_width(png, info);
  const std::size_t height = png_get_image_height(png, info);
  const std::size_t channels = png_get_channels(png, info);
  const int out_depth = png_get_bit_depth(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  buffer.resize(stride * height);
  rows.resize(height);
  for (std::size_t r = 0; r < height; ++r) rows[r] = buffer.data() + r * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Tensor out({channels, height, width}, 0.0);
  const double scale = out_depth == 16 ? 65535.0 : 255.0;
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c)
      for (std::size_t ch = 0; ch < channels; ++ch) {
        const std::size_t k = c * channels + ch;
        double v;
        if (out_depth == 16) {
          v = static_cast<double>(rows[r][2 * k] | (rows[r][2 * k + 1] << 8));
        } else {
          v = static_cast<double>(rows[r][k]);
        }
        out[(ch * height + r) * width + c] = v / scale;
      }
  return out;
}

void write_png(const std::filesystem::path& path, const Tensor& image, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw std::invalid_argument("write_png: bit depth must be 8 or 16");
  std::size_t channels = 1, height, width;
  if (image.rank() == 2) {
    height = image.dim(0);
    width = image.dim(1);
  } else if (image.rank() == 3 && (image.dim(0) == 1 || image.dim(0) == 3)) {
    channels = image.dim(0);
    height = image.dim(1);
    width = image.dim(2);
  } else {
    throw std::invalid_argument("write_png: expected [H,W], [1,H,W] or [3,H,W], got " +
                                shape_to_string(image.shape()));
  }
  const std::size_t bytes = bit_depth / 8;
  const double scale = bit_depth == 16 ? 65535.0 : 255.0;
  std::vector<png_byte> buffer(height * width * channels * bytes);
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c)
      for (std::size_t ch = 0; ch < channels; ++ch) {
        double v = image[(ch * height + r) * width + c];
        v = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
        const auto q = static_cast<unsigned>(std::lround(v * scale));
        const std::size_t k = ((r * width + c) * channels + ch) * bytes;
        if (bytes == 2) {
          buffer[k] = static_cast<png_byte>(q >> 8);
          buffer[k + 1] = static_cast<png_byte>(q & 0xFF);
        } else {
          buffer[k] = static_cast<png_byte>(q);
        }
      }
  File f(std::fopen(path.string().c_str(), "wb"));
  if (!f) throw DataError("cannot write " + path.string());
  write_rows(f.get(), path, width, height, channels, bit_depth, buffer);
}

Tensor load_image(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".llt1") return load_llt1(path);
  throw DataError("unsupported image format: " + path.string());
}

void save_image(const std::filesystem::path& path, const Tensor& image) {
  const std::string ext = lower_extension(path);
  if (ext == ".png") return write_png(path, image, 8);
  if (ext == ".llt1") return save_llt1(path, image);
  throw DataError("unsupported image format: " + path.string());
}

Psf load_psf(const std::filesystem::path& path) {
  Tensor k = load_image(path);
  if (k.rank() == 3 && k.dim(0) == 1) k = k.reshaped({k.dim(1), k.dim(2)});
  return Psf::from_tensor(std::move(k));
}

}  // namespace lensless
