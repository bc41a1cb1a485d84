#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "psim/image.hpp"
#include "psim/lora.hpp"
#include "psim/tensor.hpp"
#include "psim/vit_config.hpp"

namespace psim {

template <typename T>
struct Block {
  Vec<T> ln1_scale, ln1_offset;
  Linear<T> q, k, v, o;
  Vec<T> ln2_scale, ln2_offset;
  Linear<T> fc1, fc2;

  Linear<T>& linear(LoraTarget target);
  const Linear<T>& linear(LoraTarget target) const;
};

template <typename T>
struct ViTWeightsT {
  ViTConfig config;
  std::uint64_t init_seed = 0;
  Linear<T> patch;      ///< embed_dim x (patch_size^2 * 3)
  Mat<T> positional;    ///< (1 + patches) x embed_dim
  Vec<T> cls;
  std::vector<Block<T>> blocks;
  Vec<T> final_scale, final_offset;

  /// Visits every tensor in declaration order (the checkpoint order).
  void for_each_tensor(const std::function<void(TensorRef<T>)>& fn);
  void for_each_tensor(const std::function<void(TensorRef<const T>)>& fn) const;

  std::size_t parameter_count() const;
  /// Same shapes, all entries zero.
  ViTWeightsT zeros_like() const;

  template <typename U>
  ViTWeightsT<U> cast() const;
};

using ViTWeights = ViTWeightsT<float>;

/// Closed-form parameter count for a config.
std::size_t vit_parameter_count(const ViTConfig& config);

/// Truncated-normal (sigma 0.02, cut at 2 sigma) matrices and positional/CLS
/// vectors; biases zero; layer-norm scale 1, offset 0.
ViTWeights init_weights(const ViTConfig& config, std::uint64_t seed);

/// Throws ValidationError on a non-finite entry or a shape inconsistent with the config.
template <typename T>
void validate_weights(const ViTWeightsT<T>& weights);

struct ForwardOptions {
  bool training = false;     ///< enables adapter dropout
  std::uint64_t dropout_key = 0;
};

/// Activations retained by forward_cls for the backward pass.
template <typename T>
struct ForwardCache {
  struct LoraCache {
    Mat<T> dropped;     ///< dropout(input) (aliases the input when dropout is off)
    Mat<T> keep_scale;  ///< per-entry dropout multiplier; empty when dropout is off
    Mat<T> down;        ///< dropped * A^T
  };
  struct BlockCache {
    Mat<T> ln1_hat;
    Vec<T> ln1_rstd;
    Mat<T> u1;
    Mat<T> q, k, v;
    std::vector<Mat<T>> probs;  ///< per head, tokens x tokens
    Mat<T> z;
    Mat<T> ln2_hat;
    Vec<T> ln2_rstd;
    Mat<T> u2;
    Mat<T> h_pre;
    Mat<T> h_act;
    std::array<LoraCache, kLoraTargetCount> lora;
  };
  Mat<T> patches;  ///< patches x (patch_size^2 * 3), shifted pixels
  std::vector<BlockCache> blocks;
  RowVec<T> cls_final;  ///< last-block CLS row before the final norm
  RowVec<T> final_hat;
  T final_rstd = T(0);
};

/// Pixels must be image_size x image_size x 3, row-major interleaved.
template <typename T>
Vec<T> forward_cls(const ViTWeightsT<T>& weights, std::span<const T> pixels,
                   const LoraAdaptersT<T>* adapters = nullptr, const ForwardOptions& options = {},
                   ForwardCache<T>* cache = nullptr);

Vec<float> forward_cls(const ViTWeights& weights, const Image& image,
                       const LoraAdapters* adapters = nullptr);

/// Requested outputs; null members are skipped. Gradients accumulate (+=).
template <typename T>
struct BackwardTargets {
  ViTWeightsT<T>* weights = nullptr;
  LoraAdaptersT<T>* adapters = nullptr;
  std::vector<T>* pixels = nullptr;
};

/// Reverse-mode gradient of <grad_cls, forward_cls(...)> from a filled cache.
template <typename T>
void backward(const ViTWeightsT<T>& weights, const LoraAdaptersT<T>* adapters,
              const ForwardCache<T>& cache, const Vec<T>& grad_cls, BackwardTargets<T> targets);

/// Image converted to the backbone's pixel layout; throws naming expected/actual size.
template <typename T>
std::vector<T> image_pixels(const ViTConfig& config, const Image& image);

}  // namespace psim
