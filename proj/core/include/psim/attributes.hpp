#pragma once

#include <optional>
#include <string_view>
#include <vector>

#include "psim/image.hpp"
#include "psim/triplets.hpp"

namespace psim {

using Histogram = std::vector<double>;

inline constexpr int kRgbBins = 32;
inline constexpr int kLuminanceBins = 10;
inline constexpr double kHistogramSumTolerance = 1e-6;

/// Per-channel histograms over the masked pixels, each normalized, then
/// concatenated (R, G, B) and renormalized to sum 1.
Histogram rgb_histogram(const Image& image, const Mask* mask = nullptr, int bins_per_channel = kRgbBins);
Histogram luminance_histogram(const Image& image, const Mask* mask = nullptr, int bins = kLuminanceBins);

/// Bin of a value in [0,1]; 1.0 falls in the last bin.
int histogram_bin(double value, int bins);

/// Sum of bin-wise minima. Both inputs must sum to 1 within kHistogramSumTolerance.
double histogram_intersection(const Histogram& h1, const Histogram& h2);

enum class AttributeKind { rgb_hist_32, luminance_hist_10, things_hist, stuff_hist, per_category_area };
enum class Region { foreground, background, total };

std::string_view to_string(AttributeKind kind);
AttributeKind attribute_kind_from_string(std::string_view name);
std::string_view to_string(Region region);
Region region_from_string(std::string_view name);

struct AttributeMetric {
  AttributeKind kind = AttributeKind::rgb_hist_32;
  Region region = Region::total;
  void validate() const;
};

/// Similarity of distortion `which` (1 = A, 2 = B) to the reference under the
/// attribute; per_category_area returns the negated L1 area difference so that
/// larger is always closer.
double attribute_similarity(const AttributeMetric& metric, const LoadedTriplet& triplet, int which);

inline constexpr double kAttributeTieTolerance = 1e-12;

/// The distortion the attribute prefers (0 = A, 1 = B), or nullopt on a tie.
std::optional<int> attribute_choice(const AttributeMetric& metric, const LoadedTriplet& triplet);

/// Mean credit: 1 when the attribute's choice equals the decision, 0 when it
/// differs, 0.5 when the attribute ties.
double alignment_credit(const std::vector<int>& decisions, const std::vector<std::optional<int>>& choices);

double attribute_alignment(const std::vector<int>& decisions, const AttributeMetric& metric,
                           const TripletSet& set);

}  // namespace psim
