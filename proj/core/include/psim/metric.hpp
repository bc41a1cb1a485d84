#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "psim/image.hpp"
#include "psim/lora.hpp"
#include "psim/mlp_head.hpp"
#include "psim/vit.hpp"

namespace psim {

template <typename T>
struct BackboneT {
  std::string name;
  ViTWeightsT<T> weights;
  std::optional<LoraAdaptersT<T>> lora;
  std::optional<MlpHeadT<T>> head;
};

/// Ordered backbones whose (optionally normalized) embeddings are concatenated.
template <typename T>
struct MetricModelT {
  std::string name = "metric";
  std::vector<BackboneT<T>> backbones;
  bool concat_normalize = true;

  int input_size() const { return backbones.at(0).weights.config.image_size; }
  int embedding_dim() const;
  void validate() const;

  template <typename U>
  MetricModelT<U> cast() const;
};

using Backbone = BackboneT<float>;
using MetricModel = MetricModelT<float>;

/// n toy backbones seeded from base_seed, no adapters.
MetricModel make_model(const ViTConfig& config, int backbones, std::uint64_t base_seed,
                       std::string name = "metric");
void attach_lora_all(MetricModel& model, const LoraConfig& config, std::uint64_t seed);
void attach_heads_all(MetricModel& model, int hidden, std::uint64_t seed);

/// Resizes to the model input size when needed.
Image prepare_image(const MetricModel& model, const Image& image);

inline constexpr double kMinEmbeddingNorm = 1e-8;

template <typename T>
struct EmbedTape {
  std::vector<ForwardCache<T>> vit;
  std::vector<MlpHeadCache<T>> head;
  std::vector<Vec<T>> raw;  ///< per-backbone output before normalization
};

/// Per-backbone CLS outputs (before heads and normalization).
template <typename T>
std::vector<Vec<T>> backbone_features(const MetricModelT<T>& model, std::span<const T> pixels,
                                      const ForwardOptions& options = {}, EmbedTape<T>* tape = nullptr);

/// Heads, normalization and concatenation applied to backbone features.
template <typename T>
Vec<T> embed_from_features(const MetricModelT<T>& model, const std::vector<Vec<T>>& features,
                           EmbedTape<T>* tape = nullptr);

template <typename T>
Vec<T> embed(const MetricModelT<T>& model, std::span<const T> pixels,
             const ForwardOptions& options = {}, EmbedTape<T>* tape = nullptr);

Vec<float> embed(const MetricModel& model, const Image& image);

/// Gradients for every adapter in a model, shaped like the model's adapters.
template <typename T>
struct ModelGradT {
  std::vector<std::optional<LoraAdaptersT<T>>> lora;
  std::vector<std::optional<MlpHeadT<T>>> head;

  static ModelGradT zeros_like(const MetricModelT<T>& model);
  void set_zero();
  std::size_t parameter_count() const;
  void for_each_tensor(const std::function<void(TensorRef<T>)>& fn);
};

/// Trainable adapter tensors of a model in the same order as ModelGradT::for_each_tensor.
template <typename T>
void for_each_adapter_tensor(MetricModelT<T>& model, const std::function<void(TensorRef<T>)>& fn);

template <typename T>
void embed_backward(const MetricModelT<T>& model, const EmbedTape<T>& tape, const Vec<T>& grad,
                    ModelGradT<T>* grads, std::vector<T>* pixel_grad);

/// 1 - cos(a, b); throws NumericError when either norm is below kMinEmbeddingNorm.
template <typename T>
T cosine_distance(const Vec<T>& a, const Vec<T>& b);

/// Accumulates upstream * d(cosine_distance)/da and /db.
template <typename T>
void cosine_distance_backward(const Vec<T>& a, const Vec<T>& b, T upstream, Vec<T>* ga, Vec<T>* gb);

double distance(const MetricModel& model, const Image& x, const Image& y);

struct DistancePair {
  double d0 = 0.0;
  double d1 = 0.0;
  double delta = 0.0;  ///< d0 - d1
};

struct Vote {
  int y_hat = 0;
  bool tie = false;
  DistancePair distances;
};

inline constexpr double kTieTolerance = 1e-9;

/// y_hat = 1 iff d1 < d0; |d0 - d1| <= kTieTolerance gives 0 with the tie flag.
Vote vote_from_distances(double d0, double d1);
Vote vote_from_embeddings(const Vec<float>& ref, const Vec<float>& a, const Vec<float>& b);
Vote predict_vote(const MetricModel& model, const Image& ref, const Image& a, const Image& b);

}  // namespace psim
