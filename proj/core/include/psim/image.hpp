#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace psim {

struct Rgb {
  float r = 0.0f;
  float g = 0.0f;
  float b = 0.0f;

  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// H x W x 3 float raster, row-major, interleaved RGB, values in [0,1].
class Image {
 public:
  static constexpr int kMinSide = 8;

  Image() = default;
  Image(int height, int width, Rgb fill = {});

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(height_) * width_; }
  bool empty() const { return data_.empty(); }

  float& at(int y, int x, int c) { return data_[index(y, x) + c]; }
  float at(int y, int x, int c) const { return data_[index(y, x) + c]; }
  Rgb pixel(int y, int x) const;
  void set_pixel(int y, int x, Rgb value);

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  /// Throws ValidationError when a value is non-finite or outside [0,1].
  void validate() const;

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int y, int x) const {
    return (static_cast<std::size_t>(y) * width_ + x) * 3;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

/// Boolean foreground mask paired with an Image.
class Mask {
 public:
  Mask() = default;
  Mask(int height, int width, bool fill = false);

  int height() const { return height_; }
  int width() const { return width_; }
  bool at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int y, int x, bool value) { data_[static_cast<std::size_t>(y) * width_ + x] = value ? 1 : 0; }
  std::size_t count() const;
  bool matches(const Image& image) const {
    return image.height() == height_ && image.width() == width_;
  }
  Mask inverted() const;

  friend bool operator==(const Mask&, const Mask&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Single-channel float raster.
struct Plane {
  int height = 0;
  int width = 0;
  std::vector<float> values;

  float at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// CIE L*a*b* raster (D65). Interleaved L, a, b.
struct LabImage {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  float& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

struct LabColor {
  double l = 0.0;
  double a = 0.0;
  double b = 0.0;
};

LabColor srgb_to_lab(Rgb color);
/// Converts back to sRGB; out-of-gamut channels are clamped and `clamped` is set.
Rgb lab_to_srgb(LabColor lab, bool* clamped = nullptr);

LabImage rgb_to_lab(const Image& image);

struct LabToRgbResult {
  Image image;
  std::size_t clamped_count = 0;  ///< channel values clamped into [0,1]
};
LabToRgbResult lab_to_rgb(const LabImage& lab);

/// Rec. 709 luma on the stored (gamma-encoded) values.
Plane luminance(const Image& image);

/// Separable bilinear resampling with half-pixel centers.
Image resize_bilinear(const Image& image, int target_height, int target_width);
inline Image resize_bilinear(const Image& image, int target) {
  return resize_bilinear(image, target, target);
}

Image flip_horizontal(const Image& image);

}  // namespace psim
