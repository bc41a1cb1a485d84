#include "psim/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "psim/error.hpp"

namespace psim {

namespace {

// D65 reference white, Y normalized to 1.
constexpr double kWhiteX = 0.95047;
constexpr double kWhiteY = 1.0;
constexpr double kWhiteZ = 1.08883;
constexpr double kDelta = 6.0 / 29.0;

double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double linear_to_srgb(double c) {
  return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

double lab_f(double t) {
  return t > kDelta * kDelta * kDelta ? std::cbrt(t) : t / (3.0 * kDelta * kDelta) + 4.0 / 29.0;
}

double lab_f_inv(double t) {
  return t > kDelta ? t * t * t : 3.0 * kDelta * kDelta * (t - 4.0 / 29.0);
}

void check_side(int height, int width) {
  if (height < Image::kMinSide || width < Image::kMinSide) {
    throw ValidationError("image dimensions " + std::to_string(height) + "x" +
                          std::to_string(width) + " below minimum " +
                          std::to_string(Image::kMinSide));
  }
}

}  // namespace

Image::Image(int height, int width, Rgb fill) : height_(height), width_(width) {
  check_side(height, width);
  data_.resize(pixel_count() * 3);
  for (std::size_t i = 0; i < pixel_count(); ++i) {
    data_[i * 3 + 0] = fill.r;
    data_[i * 3 + 1] = fill.g;
    data_[i * 3 + 2] = fill.b;
  }
}

Rgb Image::pixel(int y, int x) const {
  const std::size_t i = index(y, x);
  return {data_[i], data_[i + 1], data_[i + 2]};
}

void Image::set_pixel(int y, int x, Rgb value) {
  const std::size_t i = index(y, x);
  data_[i] = value.r;
  data_[i + 1] = value.g;
  data_[i + 2] = value.b;
}

void Image::validate() const {
  check_side(height_, width_);
  for (std::size_t i = 0; i < data_.size(); ++i) {
    const float v = data_[i];
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
      throw ValidationError("image value out of [0,1] at flat index " + std::to_string(i));
    }
  }
}

Mask::Mask(int height, int width, bool fill)
    : height_(height), width_(width),
      data_(static_cast<std::size_t>(height) * width, fill ? 1 : 0) {
  check_side(height, width);
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

Mask Mask::inverted() const {
  Mask out = *this;
  for (auto& v : out.data_) v = v ? 0 : 1;
  return out;
}

LabColor srgb_to_lab(Rgb color) {
  const double r = srgb_to_linear(color.r);
  const double g = srgb_to_linear(color.g);
  const double b = srgb_to_linear(color.b);
  const double x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
  const double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
  const double z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
  const double fx = lab_f(x / kWhiteX);
  const double fy = lab_f(y / kWhiteY);
  const double fz = lab_f(z / kWhiteZ);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

Rgb lab_to_srgb(LabColor lab, bool* clamped) {
  const double fy = (lab.l + 16.0) / 116.0;
  const double fx = fy + lab.a / 500.0;
  const double fz = fy - lab.b / 200.0;
  const double x = kWhiteX * lab_f_inv(fx);
  const double y = kWhiteY * lab_f_inv(fy);
  const double z = kWhiteZ * lab_f_inv(fz);
  const double lin[3] = {
      3.2404542 * x - 1.5371385 * y - 0.4985314 * z,
      -0.9692660 * x + 1.8760108 * y + 0.0415560 * z,
      0.0556434 * x - 0.2040259 * y + 1.0572252 * z,
  };
  float out[3];
  bool any_clamped = false;
  for (int c = 0; c < 3; ++c) {
    // Rounding noise of in-gamut colors must not count as clamping.
    constexpr double kGamutSlack = 1e-6;
    double v = linear_to_srgb(std::max(lin[c], 0.0));
    if (lin[c] < -kGamutSlack || v > 1.0 + kGamutSlack) any_clamped = true;
    v = std::clamp(v, 0.0, 1.0);
    out[c] = static_cast<float>(v);
  }
  if (clamped) *clamped = any_clamped;
  return {out[0], out[1], out[2]};
}

LabImage rgb_to_lab(const Image& image) {
  LabImage lab{image.height(), image.width(), std::vector<float>(image.pixel_count() * 3)};
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const LabColor c = srgb_to_lab(image.pixel(y, x));
      lab.at(y, x, 0) = static_cast<float>(c.l);
      lab.at(y, x, 1) = static_cast<float>(c.a);
      lab.at(y, x, 2) = static_cast<float>(c.b);
    }
  }
  return lab;
}

LabToRgbResult lab_to_rgb(const LabImage& lab) {
  LabToRgbResult result{Image(lab.height, lab.width), 0};
  for (int y = 0; y < lab.height; ++y) {
    for (int x = 0; x < lab.width; ++x) {
      const LabColor c{lab.at(y, x, 0), lab.at(y, x, 1), lab.at(y, x, 2)};
      bool clamped = false;
      result.image.set_pixel(y, x, lab_to_srgb(c, &clamped));
      if (clamped) ++result.clamped_count;
    }
  }
  return result;
}

Plane luminance(const Image& image) {
  Plane plane{image.height(), image.width(), std::vector<float>(image.pixel_count())};
  const auto data = image.data();
  for (std::size_t i = 0; i < plane.values.size(); ++i) {
    const float v = 0.2126f * data[i * 3] + 0.7152f * data[i * 3 + 1] + 0.0722f * data[i * 3 + 2];
    plane.values[i] = std::clamp(v, 0.0f, 1.0f);
  }
  return plane;
}

namespace {

struct Tap {
  int lo;
  int hi;
  float w_hi;
};

std::vector<Tap> make_taps(int src, int dst) {
  std::vector<Tap> taps(dst);
  const double scale = static_cast<double>(src) / dst;
  for (int i = 0; i < dst; ++i) {
    double s = (i + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(src - 1));
    const int lo = static_cast<int>(std::floor(s));
    const int hi = std::min(lo + 1, src - 1);
    taps[i] = {lo, hi, static_cast<float>(s - lo)};
  }
  return taps;
}

}  // namespace

Image resize_bilinear(const Image& image, int target_height, int target_width) {
  if (target_height < Image::kMinSide || target_width < Image::kMinSide) {
    throw ValidationError("resize target below minimum side " + std::to_string(Image::kMinSide));
  }
  if (target_height == image.height() && target_width == image.width()) return image;

  const auto rows = make_taps(image.height(), target_height);
  const auto cols = make_taps(image.width(), target_width);

  // Horizontal pass into an intermediate H x W' buffer, then vertical.
  std::vector<float> tmp(static_cast<std::size_t>(image.height()) * target_width * 3);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < target_width; ++x) {
      const Tap& t = cols[x];
      for (int c = 0; c < 3; ++c) {
        const float a = image.at(y, t.lo, c);
        const float b = image.at(y, t.hi, c);
        tmp[(static_cast<std::size_t>(y) * target_width + x) * 3 + c] = a + (b - a) * t.w_hi;
      }
    }
  }
  Image out(target_height, target_width);
  for (int y = 0; y < target_height; ++y) {
    const Tap& t = rows[y];
    for (int x = 0; x < target_width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float a = tmp[(static_cast<std::size_t>(t.lo) * target_width + x) * 3 + c];
        const float b = tmp[(static_cast<std::size_t>(t.hi) * target_width + x) * 3 + c];
        out.at(y, x, c) = a + (b - a) * t.w_hi;
      }
    }
  }
  return out;
}

Image flip_horizontal(const Image& image) {
  Image out(image.height(), image.width());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      out.set_pixel(y, image.width() - 1 - x, image.pixel(y, x));
    }
  }
  return out;
}

}  // namespace psim
