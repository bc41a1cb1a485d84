#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "psim/tensor.hpp"
#include "psim/vit_config.hpp"

namespace psim {

enum class LoraTarget : int { q = 0, k, v, o, fc1, fc2 };
inline constexpr int kLoraTargetCount = 6;

std::string_view to_string(LoraTarget target);
LoraTarget lora_target_from_string(std::string_view name);

/// How alpha turns into the multiplier on B A x.
enum class LoraScaling { alpha_over_rank, alpha };

struct LoraConfig {
  int rank = 16;
  double alpha = 0.5;
  double dropout = 0.3;
  std::vector<LoraTarget> targets{LoraTarget::q, LoraTarget::k, LoraTarget::v, LoraTarget::o};
  LoraScaling scaling_rule = LoraScaling::alpha_over_rank;

  double scaling() const {
    return scaling_rule == LoraScaling::alpha_over_rank ? alpha / rank : alpha;
  }
  void validate() const;
  friend bool operator==(const LoraConfig&, const LoraConfig&) = default;
};

template <typename T>
struct LoraLayerT {
  int block = 0;
  LoraTarget target = LoraTarget::q;
  Mat<T> a;  ///< rank x in
  Mat<T> b;  ///< out x rank
  T scaling = T(0);
  T dropout = T(0);

  std::string id() const;
};

/// Adapters for one backbone. Lookup is by (block, target).
template <typename T>
struct LoraAdaptersT {
  LoraConfig config;
  std::vector<LoraLayerT<T>> layers;

  const LoraLayerT<T>* find(int block, LoraTarget target) const;
  LoraLayerT<T>* find(int block, LoraTarget target);
  std::size_t parameter_count() const;
  LoraAdaptersT zeros_like() const;

  void for_each_tensor(const std::function<void(TensorRef<T>)>& fn);
  void for_each_tensor(const std::function<void(TensorRef<const T>)>& fn) const;

  template <typename U>
  LoraAdaptersT<U> cast() const;
};

using LoraLayer = LoraLayerT<float>;
using LoraAdapters = LoraAdaptersT<float>;

/// A ~ N(0, (1/r)^2), B = 0 on every targeted linear layer. Throws naming the
/// layer when the rank exceeds either of its dimensions.
LoraAdapters attach_lora(const ViTConfig& vit, const LoraConfig& config, std::uint64_t seed);

struct ParameterBudget {
  std::size_t trainable = 0;
  std::size_t base = 0;
  double fraction() const { return base == 0 ? 0.0 : static_cast<double>(trainable) / base; }
};

ParameterBudget lora_budget(const ViTConfig& vit, const LoraConfig& config);

/// Dropout multiplier (0 or 1/(1-p)) for one input entry; pure in (key, index).
double dropout_keep_scale(std::uint64_t key, std::uint64_t index, double p);

/// Key for one layer's dropout mask given the caller's per-pass key.
std::uint64_t lora_layer_key(std::uint64_t pass_key, int block, LoraTarget target);

/// base_output + scaling * B A dropout(input), single vector.
template <typename T>
Vec<T> lora_forward(const Vec<T>& base_output, const Vec<T>& input, const LoraLayerT<T>& layer,
                    bool training, std::uint64_t dropout_key = 0);

void to_json(nlohmann::json& j, const LoraConfig& c);
void from_json(const nlohmann::json& j, LoraConfig& c);

}  // namespace psim
