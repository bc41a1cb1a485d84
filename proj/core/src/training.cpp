#include "psim/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "psim/error.hpp"
#include "psim/hash.hpp"
#include "psim/parallel.hpp"
#include "psim/random.hpp"

namespace psim {

void TrainConfig::validate() const {
  if (!(margin > 0.0)) throw ValidationError("train.margin must be > 0");
  if (!(learning_rate >= 0.0)) throw ValidationError("train.learning_rate must be >= 0");
  if (!(weight_decay >= 0.0)) throw ValidationError("train.weight_decay must be >= 0");
  if (batch_size < 1) throw ValidationError("train.batch_size must be >= 1");
  if (max_epochs < 1) throw ValidationError("train.max_epochs must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("train.beta1/beta2 must be in [0,1)");
  }
  if (!(adam_eps > 0.0)) throw ValidationError("train.adam_eps must be > 0");
}

int default_batch_size(int backbones) { return backbones > 1 ? 16 : 512; }

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"margin", c.margin},   {"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay},
       {"batch_size", c.batch_size}, {"max_epochs", c.max_epochs}, {"beta1", c.beta1},
       {"beta2", c.beta2}, {"adam_eps", c.adam_eps}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.margin = j.value("margin", d.margin);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.max_epochs = j.value("max_epochs", d.max_epochs);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.seed = j.value("seed", d.seed);
}

std::string config_hash(const TrainConfig& config, const MetricModel& model) {
  Fnv1a h;
  h.update(nlohmann::json(config).dump());
  h.update(model.name);
  for (const auto& b : model.backbones) {
    h.update(nlohmann::json(b.weights.config).dump());
    h.update_value(b.weights.init_seed);
    if (b.lora) h.update(nlohmann::json(b.lora->config).dump());
    if (b.head) h.update_value(b.head->hidden());
  }
  return h.hex();
}

double hinge_loss(double d0, double d1, int y, double margin) {
  const double ybar = 2.0 * y - 1.0;
  return std::max(0.0, margin - (d0 - d1) * ybar);
}

namespace {

template <typename T>
struct HingeGrad {
  TripletLoss<T> loss;
  Vec<T> g_ref, g_a, g_b;
  bool active = false;
};

template <typename T>
HingeGrad<T> hinge_on_embeddings(const Vec<T>& r, const Vec<T>& a, const Vec<T>& b, int y, T margin,
                                 bool want_grad, T grad_scale) {
  HingeGrad<T> out;
  out.loss.d0 = cosine_distance<T>(r, a);
  out.loss.d1 = cosine_distance<T>(r, b);
  const T ybar = T(2 * y - 1);
  const T slack = margin - (out.loss.d0 - out.loss.d1) * ybar;
  out.loss.loss = std::max(T(0), slack);
  out.active = slack > T(0);
  if (want_grad && out.active) {
    out.g_ref = Vec<T>::Zero(r.size());
    out.g_a = Vec<T>::Zero(a.size());
    out.g_b = Vec<T>::Zero(b.size());
    // dL/dd0 = -ybar, dL/dd1 = +ybar
    cosine_distance_backward<T>(r, a, -ybar * grad_scale, &out.g_ref, &out.g_a);
    cosine_distance_backward<T>(r, b, ybar * grad_scale, &out.g_ref, &out.g_b);
  }
  return out;
}

}  // namespace

template <typename T>
TripletLoss<T> triplet_loss(const MetricModelT<T>& model, const std::array<std::span<const T>, 3>& pixels,
                            int y, T margin, const ForwardOptions& options, ModelGradT<T>* grads,
                            T grad_scale, std::array<std::vector<T>, 3>* pixel_grads) {
  const bool want_grad = grads || pixel_grads;
  std::array<EmbedTape<T>, 3> tapes;
  std::array<Vec<T>, 3> e;
  for (int k = 0; k < 3; ++k) {
    ForwardOptions opt = options;
    opt.dropout_key = hash_combine(options.dropout_key, static_cast<std::uint64_t>(k));
    e[k] = embed<T>(model, pixels[k], opt, want_grad ? &tapes[k] : nullptr);
  }
  const auto h = hinge_on_embeddings<T>(e[0], e[1], e[2], y, margin, want_grad, grad_scale);
  if (!std::isfinite(static_cast<double>(h.loss.loss))) throw NumericError("non-finite triplet loss");
  if (want_grad && h.active) {
    const std::array<const Vec<T>*, 3> g{&h.g_ref, &h.g_a, &h.g_b};
    for (int k = 0; k < 3; ++k) {
      embed_backward<T>(model, tapes[k], *g[k], grads, pixel_grads ? &(*pixel_grads)[k] : nullptr);
    }
  } else if (pixel_grads) {
    for (int k = 0; k < 3; ++k) (*pixel_grads)[k].resize(pixels[k].size(), T(0));
  }
  return h.loss;
}

template <typename T>
TripletLoss<T> triplet_loss_features(const MetricModelT<T>& model,
                                     const std::array<std::vector<Vec<T>>, 3>& features, int y,
                                     T margin, ModelGradT<T>* grads, T grad_scale) {
  std::array<EmbedTape<T>, 3> tapes;
  std::array<Vec<T>, 3> e;
  for (int k = 0; k < 3; ++k) e[k] = embed_from_features<T>(model, features[k], grads ? &tapes[k] : nullptr);
  const auto h = hinge_on_embeddings<T>(e[0], e[1], e[2], y, margin, grads != nullptr, grad_scale);
  if (!std::isfinite(static_cast<double>(h.loss.loss))) throw NumericError("non-finite triplet loss");
  if (grads && h.active) {
    const std::array<const Vec<T>*, 3> g{&h.g_ref, &h.g_a, &h.g_b};
    for (int k = 0; k < 3; ++k) embed_backward<T>(model, tapes[k], *g[k], grads, nullptr);
  }
  return h.loss;
}

void Adam::step(MetricModel& model, ModelGradT<float>& grads) {
  std::vector<TensorRef<float>> params, gs;
  for_each_adapter_tensor<float>(model, [&](TensorRef<float> t) { params.push_back(t); });
  grads.for_each_tensor([&](TensorRef<float> t) { gs.push_back(t); });
  if (params.size() != gs.size()) throw ValidationError("gradient layout does not match the model");
  std::size_t total = 0;
  for (const auto& p : params) total += p.size();
  if (m_.empty()) {
    m_.assign(total, 0.0f);
    v_.assign(total, 0.0f);
  }
  if (m_.size() != total) throw ValidationError("optimizer state does not match the model");
  ++steps_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  const auto b1 = static_cast<float>(config_.beta1), b2 = static_cast<float>(config_.beta2);
  const auto lr = static_cast<float>(config_.learning_rate / bc1);
  const auto inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const auto eps = static_cast<float>(config_.adam_eps);
  const auto wd = static_cast<float>(config_.weight_decay);
  std::size_t off = 0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    float* p = params[t].data;
    const float* g = gs[t].data;
    for (std::size_t i = 0; i < params[t].size(); ++i, ++off) {
      const float gi = g[i] + wd * p[i];
      m_[off] = b1 * m_[off] + (1.0f - b1) * gi;
      v_[off] = b2 * v_[off] + (1.0f - b2) * gi * gi;
      p[i] -= lr * m_[off] / (std::sqrt(v_[off]) * inv_sqrt_bc2 + eps);
    }
  }
}

std::vector<float> flatten_adapters(const MetricModel& model) {
  std::vector<float> flat;
  for_each_adapter_tensor<float>(const_cast<MetricModel&>(model),
                                 [&](TensorRef<float> t) { flat.insert(flat.end(), t.data, t.data + t.size()); });
  return flat;
}

void restore_adapters(MetricModel& model, const std::vector<float>& flat) {
  std::size_t off = 0;
  for_each_adapter_tensor<float>(model, [&](TensorRef<float> t) {
    if (off + t.size() > flat.size()) throw ValidationError("adapter snapshot too short");
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
              flat.begin() + static_cast<std::ptrdiff_t>(off + t.size()), t.data);
    off += t.size();
  });
  if (off != flat.size()) throw ValidationError("adapter snapshot size mismatch");
}

const Checkpoint& select_best(const std::vector<Checkpoint>& checkpoints) {
  if (checkpoints.empty()) throw ValidationError("select_best needs at least one checkpoint");
  const Checkpoint* best = &checkpoints.front();
  for (const auto& c : checkpoints) {
    if (c.val_score > best->val_score || (c.val_score == best->val_score && c.epoch < best->epoch)) {
      best = &c;
    }
  }
  return *best;
}

std::vector<Vote> predict_votes(const MetricModel& model, const TripletSet& set, int jobs) {
  std::vector<Vec<float>> emb(set.size() * 3);
  parallel_for(emb.size(), jobs, [&](std::size_t i) {
    emb[i] = embed<float>(model, set[i / 3].images[i % 3].data());
  });
  std::vector<Vote> votes(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    votes[i] = vote_from_embeddings(emb[3 * i], emb[3 * i + 1], emb[3 * i + 2]);
  }
  return votes;
}

SplitScore evaluate_split(const MetricModel& model, const TripletSet& set, int jobs) {
  if (set.empty()) throw ValidationError("cannot evaluate an empty split");
  const auto votes = predict_votes(model, set, jobs);
  SplitScore s;
  s.n = static_cast<int>(set.size());
  int correct = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    correct += votes[i].y_hat == set[i].label ? 1 : 0;
    s.ties += votes[i].tie ? 1 : 0;
  }
  s.accuracy = static_cast<double>(correct) / s.n;
  return s;
}

Trainer::Trainer(MetricModel& model, TrainConfig config)
    : model_(model), config_(config), adam_(config) {
  config_.validate();
  model_.validate();
  std::size_t trainable = 0;
  bool any_lora = false;
  for (const auto& b : model_.backbones) {
    if (b.lora) {
      any_lora = any_lora || !b.lora->layers.empty();
      trainable += b.lora->parameter_count();
    }
    if (b.head) trainable += b.head->parameter_count();
  }
  if (trainable == 0) throw ValidationError("model has no trainable adapter parameters");
  frozen_backbones_ = !any_lora;
}

void Trainer::cache_features(const TripletSet& train) {
  features_.assign(train.size(), {});
  parallel_for(train.size() * 3, config_.jobs, [&](std::size_t i) {
    features_[i / 3][i % 3] = backbone_features<float>(model_, train[i / 3].images[i % 3].data());
  });
  cached_for_ = &train;
}

double Trainer::train_epoch(const TripletSet& train) {
  if (train.empty()) throw ValidationError("training split is empty");
  if (frozen_backbones_ && cached_for_ != &train) cache_features(train);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(hash_combine(config_.seed, static_cast<std::uint64_t>(epoch_)));
  rng.shuffle(order.begin(), order.end());

  // Fixed chunking keeps the float summation order independent of --jobs.
  constexpr std::size_t kChunks = 4;
  std::vector<ModelGradT<float>> chunk_grads(kChunks, ModelGradT<float>::zeros_like(model_));
  std::vector<double> chunk_loss(kChunks);
  double total_loss = 0.0;
  std::size_t batch_index = 0;

  for (std::size_t start = 0; start < order.size(); start += config_.batch_size, ++batch_index) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config_.batch_size));
    const float scale = 1.0f / static_cast<float>(end - start);
    parallel_for(kChunks, config_.jobs, [&](std::size_t c) {
      chunk_grads[c].set_zero();
      chunk_loss[c] = 0.0;
      for (std::size_t j = start + c; j < end; j += kChunks) {
        const std::size_t idx = order[j];
        const LoadedTriplet& t = train[idx];
        TripletLoss<float> l;
        if (frozen_backbones_) {
          l = triplet_loss_features<float>(model_, features_[idx], t.label,
                                           static_cast<float>(config_.margin), &chunk_grads[c], scale);
        } else {
          ForwardOptions opt;
          opt.training = true;
          opt.dropout_key = hash_combine(hash_combine(config_.seed ^ 0xd80b0u, epoch_), idx);
          l = triplet_loss<float>(model_, {t.images[0].data(), t.images[1].data(), t.images[2].data()},
                                  t.label, static_cast<float>(config_.margin), opt, &chunk_grads[c], scale);
        }
        chunk_loss[c] += l.loss;
      }
    });
    double batch_loss = 0.0;
    for (std::size_t c = 0; c < kChunks; ++c) batch_loss += chunk_loss[c];
    if (!std::isfinite(batch_loss)) {
      throw NumericError("non-finite loss in batch " + std::to_string(batch_index));
    }
    total_loss += batch_loss;
    std::vector<TensorRef<float>> dst;
    chunk_grads[0].for_each_tensor([&](TensorRef<float> t) { dst.push_back(t); });
    for (std::size_t c = 1; c < kChunks; ++c) {
      std::size_t k = 0;
      chunk_grads[c].for_each_tensor([&](TensorRef<float> t) {
        for (std::size_t i = 0; i < t.size(); ++i) dst[k].data[i] += t.data[i];
        ++k;
      });
    }
    adam_.step(model_, chunk_grads[0]);
  }
  ++epoch_;
  return total_loss / static_cast<double>(train.size());
}

TrainResult train(MetricModel& model, const TripletSet& train_set, const TripletSet& val_set,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  Trainer trainer(model, config);
  TrainResult result;
  const std::string hash = config_hash(config, model);
  for (int e = 0; e < config.max_epochs; ++e) {
    Checkpoint c;
    c.train_loss = trainer.train_epoch(train_set);
    c.epoch = e + 1;
    c.val_score = evaluate_split(model, val_set, config.jobs).accuracy;
    c.adapters = flatten_adapters(model);
    c.config_hash = hash;
    result.history.push_back(std::move(c));
    if (on_epoch) on_epoch(result.history.back());
  }
  const Checkpoint& best = select_best(result.history);
  result.best_index = static_cast<std::size_t>(&best - result.history.data());
  restore_adapters(model, best.adapters);
  return result;
}

template TripletLoss<float> triplet_loss(const MetricModelT<float>&, const std::array<std::span<const float>, 3>&,
                                         int, float, const ForwardOptions&, ModelGradT<float>*, float,
                                         std::array<std::vector<float>, 3>*);
template TripletLoss<double> triplet_loss(const MetricModelT<double>&,
                                          const std::array<std::span<const double>, 3>&, int, double,
                                          const ForwardOptions&, ModelGradT<double>*, double,
                                          std::array<std::vector<double>, 3>*);
template TripletLoss<float> triplet_loss_features(const MetricModelT<float>&,
                                                  const std::array<std::vector<Vec<float>>, 3>&, int,
                                                  float, ModelGradT<float>*, float);
template TripletLoss<double> triplet_loss_features(const MetricModelT<double>&,
                                                   const std::array<std::vector<Vec<double>>, 3>&, int,
                                                   double, ModelGradT<double>*, double);

}  // namespace psim
