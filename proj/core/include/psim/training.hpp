#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "psim/metric.hpp"
#include "psim/triplets.hpp"

namespace psim {

struct TrainConfig {
  double margin = 0.05;
  double learning_rate = 3e-4;
  double weight_decay = 0.0;
  int batch_size = 512;
  int max_epochs = 10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  int jobs = 1;

  void validate() const;
};

/// 16 for ensembles, 512 otherwise.
int default_batch_size(int backbones);

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
std::string config_hash(const TrainConfig& config, const MetricModel& model);

/// max(0, m - (d0 - d1) * (2y - 1)).
double hinge_loss(double d0, double d1, int y, double margin);

template <typename T>
struct TripletLoss {
  T loss = T(0);
  T d0 = T(0);
  T d1 = T(0);
};

/// Hinge loss of one triplet; when grads or pixel_grads are given, adds
/// grad_scale times the loss gradient to them. Zero subgradient at the kink.
template <typename T>
TripletLoss<T> triplet_loss(const MetricModelT<T>& model, const std::array<std::span<const T>, 3>& pixels,
                            int y, T margin, const ForwardOptions& options, ModelGradT<T>* grads,
                            T grad_scale = T(1), std::array<std::vector<T>, 3>* pixel_grads = nullptr);

/// Same loss from precomputed backbone features (frozen backbones, head tuning).
template <typename T>
TripletLoss<T> triplet_loss_features(const MetricModelT<T>& model,
                                     const std::array<std::vector<Vec<T>>, 3>& features, int y,
                                     T margin, ModelGradT<T>* grads, T grad_scale = T(1));

/// Adam over the model's adapter tensors.
class Adam {
 public:
  explicit Adam(const TrainConfig& config) : config_(config) {}
  void step(MetricModel& model, ModelGradT<float>& grads);
  std::int64_t steps() const { return steps_; }

 private:
  TrainConfig config_;
  std::int64_t steps_ = 0;
  std::vector<float> m_, v_;
};

struct Checkpoint {
  int epoch = 0;
  std::vector<float> adapters;  ///< flattened adapter tensors
  double val_score = 0.0;
  double train_loss = 0.0;
  std::string config_hash;
};

std::vector<float> flatten_adapters(const MetricModel& model);
void restore_adapters(MetricModel& model, const std::vector<float>& flat);

/// Highest validation score; ties go to the earliest epoch. Throws on empty input.
const Checkpoint& select_best(const std::vector<Checkpoint>& checkpoints);

struct SplitScore {
  double accuracy = 0.0;
  int ties = 0;
  int n = 0;
};

std::vector<Vote> predict_votes(const MetricModel& model, const TripletSet& set, int jobs = 1);

/// Fraction of triplets whose predicted vote equals the label; ties count as y_hat = 0.
SplitScore evaluate_split(const MetricModel& model, const TripletSet& set, int jobs = 1);

class Trainer {
 public:
  /// The model must carry at least one adapter; base weights stay frozen.
  Trainer(MetricModel& model, TrainConfig config);

  /// One seeded-shuffle pass; returns the mean per-triplet loss.
  double train_epoch(const TripletSet& train);
  int epochs_done() const { return epoch_; }

 private:
  void cache_features(const TripletSet& train);

  MetricModel& model_;
  TrainConfig config_;
  Adam adam_;
  int epoch_ = 0;
  bool frozen_backbones_ = false;
  const TripletSet* cached_for_ = nullptr;
  std::vector<std::array<std::vector<Vec<float>>, 3>> features_;
};

struct TrainResult {
  std::vector<Checkpoint> history;
  std::size_t best_index = 0;
  const Checkpoint& best() const { return history.at(best_index); }
};

using EpochCallback = std::function<void(const Checkpoint&)>;

/// Runs max_epochs epochs, validating after each, and leaves the model at the
/// best validation epoch.
TrainResult train(MetricModel& model, const TripletSet& train_set, const TripletSet& val_set,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

}  // namespace psim
