#pragma once

#include <string_view>

#include <nlohmann/json_fwd.hpp>

namespace psim {

enum class ClsSource { pre_norm, post_norm };

std::string_view to_string(ClsSource source);
ClsSource cls_source_from_string(std::string_view name);

struct ViTConfig {
  int image_size = 64;
  int patch_size = 8;
  int embed_dim = 64;
  int depth = 4;
  int heads = 4;
  double mlp_ratio = 4.0;
  ClsSource cls_source = ClsSource::post_norm;

  int grid() const { return image_size / patch_size; }
  int patch_count() const { return grid() * grid(); }
  int tokens() const { return patch_count() + 1; }
  int patch_dim() const { return patch_size * patch_size * 3; }
  int head_dim() const { return embed_dim / heads; }
  int mlp_dim() const { return static_cast<int>(embed_dim * mlp_ratio); }

  void validate() const;
  friend bool operator==(const ViTConfig&, const ViTConfig&) = default;
};

inline constexpr double kLayerNormEps = 1e-5;

void to_json(nlohmann::json& j, const ViTConfig& c);
void from_json(const nlohmann::json& j, ViTConfig& c);

}  // namespace psim
