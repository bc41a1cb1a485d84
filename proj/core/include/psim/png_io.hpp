#pragma once

#include <filesystem>

#include "psim/image.hpp"

namespace psim {

/// 8-bit sRGB PNG. Values are rounded to the nearest of 256 levels.
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

/// 1-bit grayscale PNG; white = foreground.
void write_mask_png(const std::filesystem::path& path, const Mask& mask);
Mask read_mask_png(const std::filesystem::path& path);

}  // namespace psim
