#pragma once

#include <cstdint>
#include <functional>
#include <string_view>

#include "psim/metric.hpp"
#include "psim/triplets.hpp"

namespace psim {

/// texture_scramble_excluded is a named placeholder: requesting it throws.
enum class Ablation { identity, flip_reference, drop_L, drop_AB, texture_scramble_excluded, fg_noise, bg_noise };

std::string_view to_string(Ablation ablation);
Ablation ablation_from_string(std::string_view name);

/// L is set to this mid-gray lightness by drop_L.
inline constexpr float kDropLightness = 50.0f;

/// Modified copy of triplet number `index`. Noise draws are keyed by
/// (seed, index, image slot, pixel, channel).
LoadedTriplet apply_ablation(const LoadedTriplet& triplet, Ablation ablation, std::uint64_t seed,
                             std::size_t index);

using TripletTransform = std::function<LoadedTriplet(const LoadedTriplet&, std::size_t)>;

struct AblationResult {
  double agreement = 0.0;
  int n = 0;
  int changed = 0;
};

/// Fraction of triplets whose predicted vote is unchanged by the transform.
AblationResult ablation_agreement(const MetricModel& model, const TripletSet& set,
                                  const TripletTransform& transform, int jobs = 1);
AblationResult ablation_agreement(const MetricModel& model, const TripletSet& set, Ablation ablation,
                                  std::uint64_t seed, int jobs = 1);

}  // namespace psim
