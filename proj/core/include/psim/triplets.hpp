#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "psim/dataset.hpp"
#include "psim/image.hpp"
#include "psim/scene.hpp"

namespace psim {

/// A triplet with its images in memory: reference, distortion A, distortion B.
struct LoadedTriplet {
  std::string id;
  std::array<Image, 3> images;
  std::optional<std::array<Mask, 3>> masks;
  std::optional<std::array<std::array<double, kShapeKindCount>, 3>> category_area;
  int label = 0;
  std::string category;
};

using TripletSet = std::vector<LoadedTriplet>;

/// Reads images (and masks when recorded) relative to base_dir, resizing to
/// `size` when it is positive. The label is the record label, falling back to
/// oracle_y when require_label is false.
TripletSet load_triplets(const Dataset& dataset, const std::filesystem::path& base_dir, int size,
                         bool require_label = true, int jobs = 1);

struct SyntheticItem {
  SampledTriplet sample;
  GeneratedTriplet rendered;
};

/// Triplet i is drawn from Rng(hash_combine(seed, i)), so any subset can be
/// regenerated independently.
SyntheticItem synthesize_one(const SamplerConfig& config, int size, std::uint64_t seed, std::size_t index);

TripletSet synthesize_triplets(std::size_t n, int size, const SamplerConfig& config,
                               std::uint64_t seed, int jobs = 1);

/// Writes PNG images and masks under out_dir/images and returns the records
/// (paths relative to out_dir, oracle_y set, no votes).
Dataset write_synthetic(const std::filesystem::path& out_dir, std::size_t n, int size,
                        const SamplerConfig& config, std::uint64_t seed, int jobs = 1);

std::string triplet_category(const SampledTriplet& sample);

}  // namespace psim
