#include "psim/ablation.hpp"

#include <string>

#include "psim/error.hpp"
#include "psim/parallel.hpp"
#include "psim/random.hpp"
#include "psim/training.hpp"

namespace psim {

namespace {

Image zero_lab_channels(const Image& image, bool lightness) {
  LabImage lab = rgb_to_lab(image);
  for (int y = 0; y < lab.height; ++y) {
    for (int x = 0; x < lab.width; ++x) {
      if (lightness) {
        lab.at(y, x, 0) = kDropLightness;
      } else {
        lab.at(y, x, 1) = 0.0f;
        lab.at(y, x, 2) = 0.0f;
      }
    }
  }
  return lab_to_rgb(lab).image;
}

Image noise_region(const Image& image, const Mask& region, std::uint64_t key) {
  Image out = image;
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      if (!region.at(y, x)) continue;
      const std::uint64_t pixel = static_cast<std::uint64_t>(y) * image.width() + x;
      for (int c = 0; c < 3; ++c) {
        out.at(y, x, c) = static_cast<float>(counter_uniform(hash_combine(hash_combine(key, pixel), c)));
      }
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(Ablation ablation) {
  switch (ablation) {
    case Ablation::identity: return "identity";
    case Ablation::flip_reference: return "flip_reference";
    case Ablation::drop_L: return "drop_L";
    case Ablation::drop_AB: return "drop_AB";
    case Ablation::texture_scramble_excluded: return "texture_scramble_excluded";
    case Ablation::fg_noise: return "fg_noise";
    case Ablation::bg_noise: return "bg_noise";
  }
  return "?";
}

Ablation ablation_from_string(std::string_view name) {
  for (auto a : {Ablation::identity, Ablation::flip_reference, Ablation::drop_L, Ablation::drop_AB,
                 Ablation::texture_scramble_excluded, Ablation::fg_noise, Ablation::bg_noise}) {
    if (to_string(a) == name) return a;
  }
  throw ValidationError("unknown ablation '" + std::string(name) + "'");
}

LoadedTriplet apply_ablation(const LoadedTriplet& triplet, Ablation ablation, std::uint64_t seed,
                             std::size_t index) {
  LoadedTriplet out = triplet;
  switch (ablation) {
    case Ablation::identity:
      break;
    case Ablation::flip_reference:
      out.images[0] = flip_horizontal(triplet.images[0]);
      break;
    case Ablation::drop_L:
    case Ablation::drop_AB:
      for (auto& img : out.images) img = zero_lab_channels(img, ablation == Ablation::drop_L);
      break;
    case Ablation::texture_scramble_excluded:
      throw ValidationError("texture_scramble_excluded needs a pretrained texture model and is not implemented");
    case Ablation::fg_noise:
    case Ablation::bg_noise: {
      if (!triplet.masks) throw ValidationError("triplet " + triplet.id + " has no masks for " +
                                                std::string(to_string(ablation)));
      const std::uint64_t key = hash_combine(seed, index);
      for (int s = 0; s < 3; ++s) {
        const Mask& m = (*triplet.masks)[s];
        const Mask region = ablation == Ablation::fg_noise ? m : m.inverted();
        out.images[s] = noise_region(triplet.images[s], region, hash_combine(key, s));
      }
      break;
    }
  }
  return out;
}

AblationResult ablation_agreement(const MetricModel& model, const TripletSet& set,
                                  const TripletTransform& transform, int jobs) {
  if (set.empty()) throw ValidationError("ablation on an empty triplet set");
  TripletSet modified(set.size());
  parallel_for(set.size(), jobs, [&](std::size_t i) { modified[i] = transform(set[i], i); });
  const auto before = predict_votes(model, set, jobs);
  const auto after = predict_votes(model, modified, jobs);
  AblationResult r;
  r.n = static_cast<int>(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) r.changed += before[i].y_hat != after[i].y_hat ? 1 : 0;
  r.agreement = static_cast<double>(r.n - r.changed) / r.n;
  return r;
}

AblationResult ablation_agreement(const MetricModel& model, const TripletSet& set, Ablation ablation,
                                  std::uint64_t seed, int jobs) {
  if (ablation == Ablation::texture_scramble_excluded) {
    throw ValidationError("texture_scramble_excluded needs a pretrained texture model and is not implemented");
  }
  return ablation_agreement(
      model, set, [&](const LoadedTriplet& t, std::size_t i) { return apply_ablation(t, ablation, seed, i); },
      jobs);
}

}  // namespace psim
