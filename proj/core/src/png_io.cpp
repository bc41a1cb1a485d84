#include "psim/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "psim/error.hpp"

namespace psim {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

void write_rows(const std::filesystem::path& path, int width, int height, int bit_depth,
                int color_type, const std::vector<std::vector<png_byte>>& rows) {
  FilePtr file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng error writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
               bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  if (color_type == PNG_COLOR_TYPE_RGB) png_set_sRGB(png, info, PNG_sRGB_INTENT_PERCEPTUAL);
  // Keep output byte-identical across runs: no timestamp chunk is written.
  png_write_info(png, info);
  for (const auto& row : rows) png_write_row(png, row.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct Decoded {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<png_byte> pixels;  // 8-bit samples, interleaved
};

Decoded read_any(const std::filesystem::path& path) {
  FilePtr file = open_file(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError(path.string() + " is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng error reading " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int color_type = png_get_color_type(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  Decoded out;
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  out.pixels.resize(stride * out.height);
  std::vector<png_bytep> rows(out.height);
  for (int y = 0; y < out.height; ++y) rows[y] = out.pixels.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& image) {
  std::vector<std::vector<png_byte>> rows(image.height(), std::vector<png_byte>(image.width() * 3));
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(y, x, c), 0.0f, 1.0f);
        rows[y][x * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0f));
      }
    }
  }
  write_rows(path, image.width(), image.height(), 8, PNG_COLOR_TYPE_RGB, rows);
}

Image read_png(const std::filesystem::path& path) {
  const Decoded d = read_any(path);
  Image image(d.height, d.width);
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      const png_byte* px = d.pixels.data() + (static_cast<std::size_t>(y) * d.width + x) * d.channels;
      for (int c = 0; c < 3; ++c) {
        const png_byte v = d.channels >= 3 ? px[c] : px[0];
        image.at(y, x, c) = static_cast<float>(v) / 255.0f;
      }
    }
  }
  return image;
}

void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
  std::vector<std::vector<png_byte>> rows(mask.height(),
                                          std::vector<png_byte>((mask.width() + 7) / 8, 0));
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (mask.at(y, x)) rows[y][x / 8] |= static_cast<png_byte>(0x80 >> (x % 8));
    }
  }
  write_rows(path, mask.width(), mask.height(), 1, PNG_COLOR_TYPE_GRAY, rows);
}

Mask read_mask_png(const std::filesystem::path& path) {
  const Decoded d = read_any(path);
  Mask mask(d.height, d.width);
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      mask.set(y, x, d.pixels[(static_cast<std::size_t>(y) * d.width + x) * d.channels] >= 128);
    }
  }
  return mask;
}

}  // namespace psim
