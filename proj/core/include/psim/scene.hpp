#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include <nlohmann/json_fwd.hpp>

#include "psim/image.hpp"
#include "psim/random.hpp"

namespace psim {

enum class ShapeKind : int { circle = 0, square = 1, triangle = 2, star = 3 };
inline constexpr int kShapeKindCount = 4;

std::string_view to_string(ShapeKind kind);
ShapeKind shape_kind_from_string(std::string_view name);

struct SceneParams {
  ShapeKind shape_kind = ShapeKind::circle;
  int count = 1;
  Rgb fg_color{1.0f, 1.0f, 1.0f};
  Rgb bg_color{0.0f, 0.0f, 0.0f};
  double center_u = 0.5;
  double center_v = 0.5;
  double scale = 0.25;     ///< item-group radius as a fraction of min(H, W)
  double rotation = 0.0;   ///< radians
  std::uint64_t rng_seed = 0;

  /// Throws ValidationError naming the first violated field.
  void validate() const;

  friend bool operator==(const SceneParams&, const SceneParams&) = default;
};

inline constexpr int kMaxCount = 9;
inline constexpr double kMaxScale = 0.5;
inline constexpr double kMinColorGap = 0.1;

/// Change applied to a reference scene. shape_step rotates through the shape
/// kinds; any non-zero step counts as one categorical change.
struct Perturbation {
  Rgb fg_shift{};
  Rgb bg_shift{};
  int shape_step = 0;
  int count_delta = 0;
  double scale_delta = 0.0;
  double center_du = 0.0;
  double center_dv = 0.0;
  double rotation_delta = 0.0;

  friend bool operator==(const Perturbation&, const Perturbation&) = default;
};

struct SalienceWeights {
  double fg_color = 1.0;
  double shape_kind = 1.0;
  double count = 0.8;
  double scale = 0.5;
  double bg_color = 0.4;
  double center = 0.3;
  double rotation = 0.2;

  friend bool operator==(const SalienceWeights&, const SalienceWeights&) = default;
};

/// Weighted perturbation norm: root of the summed squared per-dimension costs,
/// each cost being weight times the dimension's magnitude (L2 over color and
/// center components, 1 per shape change).
double weighted_norm(const Perturbation& delta, const SalienceWeights& weights);

/// Applies delta and validates the result.
SceneParams apply_perturbation(const SceneParams& reference, const Perturbation& delta);

struct TripletSpec {
  SceneParams reference;
  Perturbation delta_a;
  Perturbation delta_b;
  SalienceWeights salience_weights;

  friend bool operator==(const TripletSpec&, const TripletSpec&) = default;
};

struct RenderedScene {
  Image image;
  Mask mask;
  /// Coverage fraction of the image per shape kind.
  std::array<double, kShapeKindCount> category_area{};
};

/// Deterministic 4x4-supersampled rasterization. Requires size >= 32.
RenderedScene render_scene(const SceneParams& params, int size);

inline constexpr int kMinRenderSize = 32;
inline constexpr double kAmbiguityTolerance = 1e-9;

struct GeneratedTriplet {
  std::array<RenderedScene, 3> scenes;  ///< reference, distortion A, distortion B
  int oracle_label = 0;                 ///< 1 iff B is closer to the reference
  double norm_a = 0.0;
  double norm_b = 0.0;
};

GeneratedTriplet generate_triplet(const TripletSpec& spec, int size);

/// Oracle label alone (no rendering).
int oracle_label(const TripletSpec& spec);

enum class PerturbDim : int {
  fg_color = 0,
  shape_kind,
  count,
  scale,
  bg_color,
  center,
  rotation,
};
inline constexpr int kPerturbDimCount = 7;
std::string_view to_string(PerturbDim dim);

/// Distribution the triplet sampler draws from.
struct SamplerConfig {
  SalienceWeights weights;
  /// Relative selection frequency of each perturbed dimension (PerturbDim order).
  std::array<double, kPerturbDimCount> dim_frequency{0.3, 0.0, 0.0, 0.1, 0.3, 0.15, 0.15};
  int dims_per_distortion = 1;
  double color_sigma = 0.25;
  double count_sigma = 1.0;
  double scale_sigma = 0.08;
  double center_sigma = 0.08;
  double rotation_sigma = 0.5;
  double min_margin = 0.05;

  double reference_scale_min = 0.3;
  double reference_scale_max = 0.45;
  int reference_count_max = 4;
  double reference_min_color_gap = 0.3;

  void validate() const;
  friend bool operator==(const SamplerConfig&, const SamplerConfig&) = default;
};

struct SampledTriplet {
  TripletSpec spec;
  PerturbDim dim_a = PerturbDim::fg_color;  ///< first dimension perturbed in A
  PerturbDim dim_b = PerturbDim::fg_color;
};

/// Draws a reference scene and two perturbations whose weighted norms differ by
/// at least config.min_margin. Gaussian per dimension, resampled until valid.
SampledTriplet sample_triplet(const SamplerConfig& config, Rng& rng);

void to_json(nlohmann::json& j, const SceneParams& p);
void from_json(const nlohmann::json& j, SceneParams& p);
void to_json(nlohmann::json& j, const Perturbation& p);
void from_json(const nlohmann::json& j, Perturbation& p);
void to_json(nlohmann::json& j, const SalienceWeights& w);
void from_json(const nlohmann::json& j, SalienceWeights& w);
void to_json(nlohmann::json& j, const TripletSpec& s);
void from_json(const nlohmann::json& j, TripletSpec& s);
void to_json(nlohmann::json& j, const SamplerConfig& c);
void from_json(const nlohmann::json& j, SamplerConfig& c);

}  // namespace psim
