#include "psim/attributes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "psim/error.hpp"

namespace psim {

namespace {

template <typename PixelFn>
Histogram masked_histogram(const Image& image, const Mask* mask, int channels, int bins, PixelFn value) {
  if (bins < 1) throw ValidationError("histogram needs at least one bin");
  if (mask && !mask->matches(image)) throw ValidationError("mask dimensions do not match the image");
  std::vector<std::vector<double>> counts(channels, std::vector<double>(bins, 0.0));
  std::size_t n = 0;
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      if (mask && !mask->at(y, x)) continue;
      ++n;
      for (int c = 0; c < channels; ++c) counts[c][histogram_bin(value(y, x, c), bins)] += 1.0;
    }
  }
  if (n == 0) throw ValidationError("histogram region is empty");
  Histogram out;
  out.reserve(static_cast<std::size_t>(channels) * bins);
  for (const auto& ch : counts) {
    for (double v : ch) out.push_back(v / static_cast<double>(n) / channels);
  }
  return out;
}

void check_normalized(const Histogram& h, const char* which) {
  const double s = std::accumulate(h.begin(), h.end(), 0.0);
  if (std::abs(s - 1.0) > kHistogramSumTolerance) {
    throw ValidationError(std::string("histogram ") + which + " sums to " + std::to_string(s) + ", not 1");
  }
  for (double v : h) {
    if (!(v >= 0.0)) throw ValidationError(std::string("histogram ") + which + " has a negative bin");
  }
}

const Mask* region_mask(const LoadedTriplet& t, int slot, Region region, Mask& scratch) {
  if (region == Region::total) return nullptr;
  if (!t.masks) throw ValidationError("triplet " + t.id + " has no masks for a region attribute");
  const Mask& m = (*t.masks)[slot];
  if (region == Region::foreground) return &m;
  scratch = m.inverted();
  return &scratch;
}

Histogram slot_histogram(const AttributeMetric& metric, const LoadedTriplet& t, int slot) {
  Mask scratch;
  switch (metric.kind) {
    case AttributeKind::rgb_hist_32:
      return rgb_histogram(t.images[slot], region_mask(t, slot, metric.region, scratch), kRgbBins);
    case AttributeKind::luminance_hist_10:
      return luminance_histogram(t.images[slot], region_mask(t, slot, metric.region, scratch), kLuminanceBins);
    case AttributeKind::things_hist: {
      if (!t.category_area) throw ValidationError("triplet " + t.id + " has no category areas");
      const auto& area = (*t.category_area)[slot];
      const double total = std::accumulate(area.begin(), area.end(), 0.0);
      if (total <= 0.0) throw ValidationError("triplet " + t.id + " has zero category area");
      Histogram h(area.begin(), area.end());
      for (double& v : h) v /= total;
      return h;
    }
    case AttributeKind::stuff_hist: {
      if (!t.masks) throw ValidationError("triplet " + t.id + " has no masks for stuff_hist");
      const Mask& m = (*t.masks)[slot];
      const double fg = static_cast<double>(m.count()) / (static_cast<double>(m.height()) * m.width());
      return {fg, 1.0 - fg};
    }
    case AttributeKind::per_category_area:
      break;
  }
  throw ValidationError("attribute has no histogram form");
}

}  // namespace

int histogram_bin(double value, int bins) {
  const int b = static_cast<int>(std::floor(value * bins));
  return std::clamp(b, 0, bins - 1);
}

Histogram rgb_histogram(const Image& image, const Mask* mask, int bins_per_channel) {
  return masked_histogram(image, mask, 3, bins_per_channel,
                          [&](int y, int x, int c) { return static_cast<double>(image.at(y, x, c)); });
}

Histogram luminance_histogram(const Image& image, const Mask* mask, int bins) {
  const Plane lum = luminance(image);
  return masked_histogram(image, mask, 1, bins,
                          [&](int y, int x, int) { return static_cast<double>(lum.at(y, x)); });
}

double histogram_intersection(const Histogram& h1, const Histogram& h2) {
  if (h1.size() != h2.size() || h1.empty()) {
    throw ValidationError("histogram bin counts differ: " + std::to_string(h1.size()) + " vs " +
                          std::to_string(h2.size()));
  }
  check_normalized(h1, "h1");
  check_normalized(h2, "h2");
  double s = 0.0;
  for (std::size_t i = 0; i < h1.size(); ++i) s += std::min(h1[i], h2[i]);
  return std::clamp(s, 0.0, 1.0);
}

std::string_view to_string(AttributeKind kind) {
  switch (kind) {
    case AttributeKind::rgb_hist_32: return "rgb_hist_32";
    case AttributeKind::luminance_hist_10: return "luminance_hist_10";
    case AttributeKind::things_hist: return "things_hist";
    case AttributeKind::stuff_hist: return "stuff_hist";
    case AttributeKind::per_category_area: return "per_category_area";
  }
  return "?";
}

AttributeKind attribute_kind_from_string(std::string_view name) {
  for (auto k : {AttributeKind::rgb_hist_32, AttributeKind::luminance_hist_10, AttributeKind::things_hist,
                 AttributeKind::stuff_hist, AttributeKind::per_category_area}) {
    if (to_string(k) == name) return k;
  }
  throw ValidationError("unknown attribute kind '" + std::string(name) + "'");
}

std::string_view to_string(Region region) {
  switch (region) {
    case Region::foreground: return "foreground";
    case Region::background: return "background";
    case Region::total: return "total";
  }
  return "?";
}

Region region_from_string(std::string_view name) {
  for (auto r : {Region::foreground, Region::background, Region::total}) {
    if (to_string(r) == name) return r;
  }
  throw ValidationError("unknown region '" + std::string(name) + "'");
}

void AttributeMetric::validate() const {
  const bool color = kind == AttributeKind::rgb_hist_32 || kind == AttributeKind::luminance_hist_10;
  if (!color && region != Region::total) {
    throw ValidationError(std::string(to_string(kind)) + " is defined over the whole image only");
  }
}

double attribute_similarity(const AttributeMetric& metric, const LoadedTriplet& triplet, int which) {
  metric.validate();
  if (which != 1 && which != 2) throw ValidationError("attribute_similarity: which must be 1 or 2");
  if (metric.kind == AttributeKind::per_category_area) {
    if (!triplet.category_area) throw ValidationError("triplet " + triplet.id + " has no category areas");
    const auto& ref = (*triplet.category_area)[0];
    const auto& other = (*triplet.category_area)[which];
    double diff = 0.0;
    for (std::size_t k = 0; k < ref.size(); ++k) diff += std::abs(ref[k] - other[k]);
    return -diff;
  }
  return histogram_intersection(slot_histogram(metric, triplet, 0), slot_histogram(metric, triplet, which));
}

std::optional<int> attribute_choice(const AttributeMetric& metric, const LoadedTriplet& triplet) {
  const double sa = attribute_similarity(metric, triplet, 1);
  const double sb = attribute_similarity(metric, triplet, 2);
  if (std::abs(sa - sb) <= kAttributeTieTolerance) return std::nullopt;
  return sb > sa ? 1 : 0;
}

double alignment_credit(const std::vector<int>& decisions, const std::vector<std::optional<int>>& choices) {
  if (decisions.empty()) throw ValidationError("attribute alignment on an empty set");
  if (decisions.size() != choices.size()) throw ValidationError("decisions and attribute choices differ in length");
  double credit = 0.0;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    if (!choices[i]) credit += 0.5;
    else if (*choices[i] == decisions[i]) credit += 1.0;
  }
  return credit / static_cast<double>(decisions.size());
}

double attribute_alignment(const std::vector<int>& decisions, const AttributeMetric& metric,
                           const TripletSet& set) {
  std::vector<std::optional<int>> choices;
  choices.reserve(set.size());
  for (const auto& t : set) choices.push_back(attribute_choice(metric, t));
  return alignment_credit(decisions, choices);
}

}  // namespace psim
