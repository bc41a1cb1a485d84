#include "psim/metric.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "psim/error.hpp"
#include "psim/random.hpp"

namespace psim {

template <typename T>
int MetricModelT<T>::embedding_dim() const {
  int n = 0;
  for (const auto& b : backbones) n += b.weights.config.embed_dim;
  return n;
}

template <typename T>
void MetricModelT<T>::validate() const {
  if (backbones.empty()) throw ValidationError("metric model needs at least one backbone");
  const int size = input_size();
  for (const auto& b : backbones) {
    if (b.weights.config.image_size != size) {
      throw ValidationError("backbone " + b.name + " input size differs from " +
                            backbones.front().name);
    }
    validate_weights(b.weights);
    if (b.head) {
      b.head->validate();
      if (b.head->dim() != b.weights.config.embed_dim) {
        throw ValidationError("MLP head of " + b.name + " does not match embed_dim");
      }
    }
  }
}

template <typename T>
template <typename U>
MetricModelT<U> MetricModelT<T>::cast() const {
  MetricModelT<U> out;
  out.name = name;
  out.concat_normalize = concat_normalize;
  for (const auto& b : backbones) {
    BackboneT<U> nb;
    nb.name = b.name;
    nb.weights = b.weights.template cast<U>();
    if (b.lora) nb.lora = b.lora->template cast<U>();
    if (b.head) nb.head = b.head->template cast<U>();
    out.backbones.push_back(std::move(nb));
  }
  return out;
}

MetricModel make_model(const ViTConfig& config, int backbones, std::uint64_t base_seed,
                       std::string name) {
  if (backbones < 1) throw ValidationError("backbone count must be >= 1");
  MetricModel model;
  model.name = std::move(name);
  for (int i = 0; i < backbones; ++i) {
    Backbone b;
    b.name = "vit" + std::to_string(i);
    b.weights = init_weights(config, hash_combine(base_seed, static_cast<std::uint64_t>(i)));
    model.backbones.push_back(std::move(b));
  }
  return model;
}

void attach_lora_all(MetricModel& model, const LoraConfig& config, std::uint64_t seed) {
  for (std::size_t i = 0; i < model.backbones.size(); ++i) {
    auto& b = model.backbones[i];
    b.lora = attach_lora(b.weights.config, config, hash_combine(seed, i));
  }
}

void attach_heads_all(MetricModel& model, int hidden, std::uint64_t seed) {
  for (std::size_t i = 0; i < model.backbones.size(); ++i) {
    auto& b = model.backbones[i];
    b.head = init_mlp_head(b.weights.config.embed_dim, hidden, hash_combine(seed, i));
  }
}

Image prepare_image(const MetricModel& model, const Image& image) {
  const int s = model.input_size();
  if (image.height() == s && image.width() == s) return image;
  return resize_bilinear(image, s, s);
}

template <typename T>
std::vector<Vec<T>> backbone_features(const MetricModelT<T>& model, std::span<const T> pixels,
                                      const ForwardOptions& options, EmbedTape<T>* tape) {
  const std::size_t n = model.backbones.size();
  if (tape) tape->vit.resize(n);
  std::vector<Vec<T>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& b = model.backbones[i];
    ForwardOptions opt = options;
    opt.dropout_key = hash_combine(options.dropout_key, i);
    try {
      out[i] = forward_cls<T>(b.weights, pixels, b.lora ? &*b.lora : nullptr, opt,
                              tape ? &tape->vit[i] : nullptr);
    } catch (const ValidationError& err) {
      throw ValidationError("backbone " + b.name + ": " + err.what());
    } catch (const NumericError& err) {
      throw NumericError("backbone " + b.name + ": " + err.what());
    }
  }
  return out;
}

template <typename T>
Vec<T> embed_from_features(const MetricModelT<T>& model, const std::vector<Vec<T>>& features,
                           EmbedTape<T>* tape) {
  const std::size_t n = model.backbones.size();
  if (features.size() != n) throw ValidationError("feature count does not match backbone count");
  if (tape) {
    tape->head.resize(n);
    tape->raw.resize(n);
  }
  Vec<T> out(model.embedding_dim());
  Eigen::Index offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& b = model.backbones[i];
    Vec<T> e = b.head ? mlp_head_forward<T>(*b.head, features[i], tape ? &tape->head[i] : nullptr)
                      : features[i];
    if (tape) tape->raw[i] = e;
    if (model.concat_normalize) {
      const T norm = e.norm();
      if (!(static_cast<double>(norm) >= kMinEmbeddingNorm)) {
        throw NumericError("degenerate embedding from backbone " + b.name);
      }
      e /= norm;
    }
    out.segment(offset, e.size()) = e;
    offset += e.size();
  }
  return out;
}

template <typename T>
Vec<T> embed(const MetricModelT<T>& model, std::span<const T> pixels, const ForwardOptions& options,
             EmbedTape<T>* tape) {
  return embed_from_features(model, backbone_features(model, pixels, options, tape), tape);
}

Vec<float> embed(const MetricModel& model, const Image& image) {
  const auto pixels = image_pixels<float>(model.backbones.at(0).weights.config, image);
  return embed<float>(model, pixels);
}

template <typename T>
ModelGradT<T> ModelGradT<T>::zeros_like(const MetricModelT<T>& model) {
  ModelGradT g;
  for (const auto& b : model.backbones) {
    g.lora.push_back(b.lora ? std::optional(b.lora->zeros_like()) : std::nullopt);
    g.head.push_back(b.head ? std::optional(b.head->zeros_like()) : std::nullopt);
  }
  return g;
}

template <typename T>
void ModelGradT<T>::set_zero() {
  for_each_tensor([](TensorRef<T> t) { std::fill(t.data, t.data + t.size(), T(0)); });
}

template <typename T>
std::size_t ModelGradT<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : lora) n += l ? l->parameter_count() : 0;
  for (const auto& h : head) n += h ? h->parameter_count() : 0;
  return n;
}

template <typename T>
void ModelGradT<T>::for_each_tensor(const std::function<void(TensorRef<T>)>& fn) {
  for (std::size_t i = 0; i < lora.size(); ++i) {
    if (lora[i]) lora[i]->for_each_tensor(fn);
    if (head[i]) head[i]->for_each_tensor(fn);
  }
}

template <typename T>
void for_each_adapter_tensor(MetricModelT<T>& model, const std::function<void(TensorRef<T>)>& fn) {
  for (auto& b : model.backbones) {
    if (b.lora) b.lora->for_each_tensor(fn);
    if (b.head) b.head->for_each_tensor(fn);
  }
}

template <typename T>
void embed_backward(const MetricModelT<T>& model, const EmbedTape<T>& tape, const Vec<T>& grad,
                    ModelGradT<T>* grads, std::vector<T>* pixel_grad) {
  Eigen::Index offset = 0;
  for (std::size_t i = 0; i < model.backbones.size(); ++i) {
    const auto& b = model.backbones[i];
    const Vec<T>& raw = tape.raw[i];
    Vec<T> g = grad.segment(offset, raw.size());
    offset += raw.size();
    if (model.concat_normalize) {
      const T norm = raw.norm();
      const Vec<T> unit = raw / norm;
      g = (g - unit * unit.dot(g)) / norm;
    }
    if (b.head) g = mlp_head_backward<T>(*b.head, tape.head[i], g, grads && grads->head[i] ? &*grads->head[i] : nullptr);
    const bool need_vit = pixel_grad || (grads && grads->lora[i]);
    if (!need_vit) continue;
    if (tape.vit.size() <= i) throw ValidationError("embed_backward: backbone activations were not recorded");
    BackwardTargets<T> targets;
    targets.adapters = grads && grads->lora[i] ? &*grads->lora[i] : nullptr;
    targets.pixels = pixel_grad;
    backward<T>(b.weights, b.lora ? &*b.lora : nullptr, tape.vit[i], g, targets);
  }
}

template <typename T>
T cosine_distance(const Vec<T>& a, const Vec<T>& b) {
  if (a.size() != b.size()) throw ValidationError("cosine_distance: length mismatch");
  const T na = a.norm(), nb = b.norm();
  if (!(static_cast<double>(na) >= kMinEmbeddingNorm && static_cast<double>(nb) >= kMinEmbeddingNorm)) {
    throw NumericError("degenerate embedding (norm < 1e-8) in cosine distance");
  }
  T cos = a.dot(b) / (na * nb);
  cos = std::clamp(cos, T(-1), T(1));
  return T(1) - cos;
}

template <typename T>
void cosine_distance_backward(const Vec<T>& a, const Vec<T>& b, T upstream, Vec<T>* ga, Vec<T>* gb) {
  const T na = a.norm(), nb = b.norm();
  const T cos = a.dot(b) / (na * nb);
  if (ga) *ga -= upstream * (b / (na * nb) - cos * a / (na * na));
  if (gb) *gb -= upstream * (a / (na * nb) - cos * b / (nb * nb));
}

double distance(const MetricModel& model, const Image& x, const Image& y) {
  const Vec<double> a = embed(model, x).cast<double>();
  const Vec<double> b = embed(model, y).cast<double>();
  return cosine_distance<double>(a, b);
}

Vote vote_from_distances(double d0, double d1) {
  Vote v;
  v.distances = {d0, d1, d0 - d1};
  if (std::abs(d0 - d1) <= kTieTolerance) {
    v.tie = true;
    v.y_hat = 0;
  } else {
    v.y_hat = d1 < d0 ? 1 : 0;
  }
  return v;
}

Vote vote_from_embeddings(const Vec<float>& ref, const Vec<float>& a, const Vec<float>& b) {
  const Vec<double> r = ref.cast<double>();
  return vote_from_distances(cosine_distance<double>(r, a.cast<double>()),
                             cosine_distance<double>(r, b.cast<double>()));
}

Vote predict_vote(const MetricModel& model, const Image& ref, const Image& a, const Image& b) {
  return vote_from_embeddings(embed(model, ref), embed(model, a), embed(model, b));
}

template struct MetricModelT<float>;
template struct MetricModelT<double>;
template MetricModelT<double> MetricModelT<float>::cast<double>() const;
template MetricModelT<float> MetricModelT<double>::cast<float>() const;
template MetricModelT<float> MetricModelT<float>::cast<float>() const;
template struct ModelGradT<float>;
template struct ModelGradT<double>;
template std::vector<Vec<float>> backbone_features(const MetricModelT<float>&, std::span<const float>,
                                                   const ForwardOptions&, EmbedTape<float>*);
template std::vector<Vec<double>> backbone_features(const MetricModelT<double>&,
                                                    std::span<const double>, const ForwardOptions&,
                                                    EmbedTape<double>*);
template Vec<float> embed_from_features(const MetricModelT<float>&, const std::vector<Vec<float>>&,
                                        EmbedTape<float>*);
template Vec<double> embed_from_features(const MetricModelT<double>&,
                                         const std::vector<Vec<double>>&, EmbedTape<double>*);
template Vec<float> embed(const MetricModelT<float>&, std::span<const float>, const ForwardOptions&,
                          EmbedTape<float>*);
template Vec<double> embed(const MetricModelT<double>&, std::span<const double>,
                           const ForwardOptions&, EmbedTape<double>*);
template void for_each_adapter_tensor(MetricModelT<float>&, const std::function<void(TensorRef<float>)>&);
template void for_each_adapter_tensor(MetricModelT<double>&,
                                      const std::function<void(TensorRef<double>)>&);
template void embed_backward(const MetricModelT<float>&, const EmbedTape<float>&, const Vec<float>&,
                             ModelGradT<float>*, std::vector<float>*);
template void embed_backward(const MetricModelT<double>&, const EmbedTape<double>&,
                             const Vec<double>&, ModelGradT<double>*, std::vector<double>*);
template float cosine_distance(const Vec<float>&, const Vec<float>&);
template double cosine_distance(const Vec<double>&, const Vec<double>&);
template void cosine_distance_backward(const Vec<float>&, const Vec<float>&, float, Vec<float>*,
                                       Vec<float>*);
template void cosine_distance_backward(const Vec<double>&, const Vec<double>&, double,
                                       Vec<double>*, Vec<double>*);

}  // namespace psim
