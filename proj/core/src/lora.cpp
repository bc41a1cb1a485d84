#include "psim/lora.hpp"

#include <algorithm>
#include <cmath>
#include <utility>
#include <string>

#include <nlohmann/json.hpp>

#include "psim/error.hpp"
#include "psim/random.hpp"
#include "psim/vit.hpp"

namespace psim {

namespace {

constexpr std::array<std::string_view, kLoraTargetCount> kTargetNames{"q", "k", "v", "o", "fc1",
                                                                      "fc2"};

std::pair<int, int> target_shape(const ViTConfig& vit, LoraTarget target) {
  switch (target) {
    case LoraTarget::fc1:
      return {vit.embed_dim, vit.mlp_dim()};
    case LoraTarget::fc2:
      return {vit.mlp_dim(), vit.embed_dim};
    default:
      return {vit.embed_dim, vit.embed_dim};
  }
}

}  // namespace

std::string_view to_string(LoraTarget target) { return kTargetNames[static_cast<int>(target)]; }

LoraTarget lora_target_from_string(std::string_view name) {
  for (int i = 0; i < kLoraTargetCount; ++i) {
    if (kTargetNames[i] == name) return static_cast<LoraTarget>(i);
  }
  throw ValidationError("unknown LoRA target '" + std::string(name) + "'");
}

void LoraConfig::validate() const {
  if (rank < 1) throw ValidationError("lora.rank must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("lora.dropout must be in [0,1)");
  if (!std::isfinite(alpha)) throw ValidationError("lora.alpha must be finite");
  for (std::size_t i = 0; i < targets.size(); ++i) {
    for (std::size_t j = i + 1; j < targets.size(); ++j) {
      if (targets[i] == targets[j]) throw ValidationError("lora.targets contains duplicates");
    }
  }
}

template <typename T>
std::string LoraLayerT<T>::id() const {
  return "block" + std::to_string(block) + "." + std::string(to_string(target));
}

template <typename T>
const LoraLayerT<T>* LoraAdaptersT<T>::find(int block, LoraTarget target) const {
  for (const auto& layer : layers) {
    if (layer.block == block && layer.target == target) return &layer;
  }
  return nullptr;
}

template <typename T>
LoraLayerT<T>* LoraAdaptersT<T>::find(int block, LoraTarget target) {
  return const_cast<LoraLayerT<T>*>(std::as_const(*this).find(block, target));
}

template <typename T>
std::size_t LoraAdaptersT<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers) n += layer.a.size() + layer.b.size();
  return n;
}

template <typename T>
LoraAdaptersT<T> LoraAdaptersT<T>::zeros_like() const {
  LoraAdaptersT out = *this;
  for (auto& layer : out.layers) {
    layer.a.setZero();
    layer.b.setZero();
  }
  return out;
}

template <typename T>
void LoraAdaptersT<T>::for_each_tensor(const std::function<void(TensorRef<T>)>& fn) {
  for (auto& layer : layers) {
    fn(tensor_ref(layer.id() + ".a", layer.a));
    fn(tensor_ref(layer.id() + ".b", layer.b));
  }
}

template <typename T>
void LoraAdaptersT<T>::for_each_tensor(const std::function<void(TensorRef<const T>)>& fn) const {
  for (const auto& layer : layers) {
    fn({layer.id() + ".a", layer.a.data(), static_cast<int>(layer.a.rows()),
        static_cast<int>(layer.a.cols())});
    fn({layer.id() + ".b", layer.b.data(), static_cast<int>(layer.b.rows()),
        static_cast<int>(layer.b.cols())});
  }
}

template <typename T>
template <typename U>
LoraAdaptersT<U> LoraAdaptersT<T>::cast() const {
  LoraAdaptersT<U> out;
  out.config = config;
  for (const auto& layer : layers) {
    LoraLayerT<U> l;
    l.block = layer.block;
    l.target = layer.target;
    l.a = layer.a.template cast<U>();
    l.b = layer.b.template cast<U>();
    l.scaling = static_cast<U>(layer.scaling);
    l.dropout = static_cast<U>(layer.dropout);
    out.layers.push_back(std::move(l));
  }
  return out;
}

LoraAdapters attach_lora(const ViTConfig& vit, const LoraConfig& config, std::uint64_t seed) {
  vit.validate();
  config.validate();
  LoraAdapters out;
  out.config = config;
  Rng rng(seed);
  for (int block = 0; block < vit.depth; ++block) {
    for (LoraTarget target : config.targets) {
      const auto [in, outd] = target_shape(vit, target);
      LoraLayer layer;
      layer.block = block;
      layer.target = target;
      if (config.rank > std::min(in, outd)) {
        throw ValidationError("lora rank " + std::to_string(config.rank) + " exceeds dimension of " +
                              layer.id() + " (" + std::to_string(outd) + "x" + std::to_string(in) +
                              ")");
      }
      layer.a.resize(config.rank, in);
      const double sigma = 1.0 / config.rank;
      for (Eigen::Index i = 0; i < layer.a.size(); ++i) {
        layer.a.data()[i] = static_cast<float>(rng.normal() * sigma);
      }
      layer.b = Mat<float>::Zero(outd, config.rank);
      layer.scaling = static_cast<float>(config.scaling());
      layer.dropout = static_cast<float>(config.dropout);
      out.layers.push_back(std::move(layer));
    }
  }
  return out;
}

ParameterBudget lora_budget(const ViTConfig& vit, const LoraConfig& config) {
  ParameterBudget budget;
  budget.base = vit_parameter_count(vit);
  for (LoraTarget target : config.targets) {
    const auto [in, out] = target_shape(vit, target);
    budget.trainable += static_cast<std::size_t>(vit.depth) * config.rank * (in + out);
  }
  return budget;
}

double dropout_keep_scale(std::uint64_t key, std::uint64_t index, double p) {
  if (p <= 0.0) return 1.0;
  return counter_uniform(hash_combine(key, index)) < p ? 0.0 : 1.0 / (1.0 - p);
}

std::uint64_t lora_layer_key(std::uint64_t pass_key, int block, LoraTarget target) {
  return hash_combine(hash_combine(pass_key, static_cast<std::uint64_t>(block)),
                      static_cast<std::uint64_t>(target) + 0x100);
}

template <typename T>
Vec<T> lora_forward(const Vec<T>& base_output, const Vec<T>& input, const LoraLayerT<T>& layer,
                    bool training, std::uint64_t dropout_key) {
  if (input.size() != layer.a.cols()) {
    throw ValidationError("lora_forward: input length " + std::to_string(input.size()) +
                          " != " + std::to_string(layer.a.cols()) + " for " + layer.id());
  }
  if (base_output.size() != layer.b.rows()) {
    throw ValidationError("lora_forward: base_output length " +
                          std::to_string(base_output.size()) + " != " +
                          std::to_string(layer.b.rows()) + " for " + layer.id());
  }
  Vec<T> x = input;
  if (training) {
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      x[i] *= static_cast<T>(dropout_keep_scale(dropout_key, static_cast<std::uint64_t>(i),
                                                static_cast<double>(layer.dropout)));
    }
  }
  return base_output + layer.scaling * (layer.b * (layer.a * x));
}

void to_json(nlohmann::json& j, const LoraConfig& c) {
  std::vector<std::string> targets;
  for (auto t : c.targets) targets.emplace_back(to_string(t));
  j = {{"rank", c.rank},
       {"alpha", c.alpha},
       {"dropout", c.dropout},
       {"targets", targets},
       {"scaling_rule", c.scaling_rule == LoraScaling::alpha ? "alpha" : "alpha_over_rank"}};
}

void from_json(const nlohmann::json& j, LoraConfig& c) {
  LoraConfig d;
  c.rank = j.value("rank", d.rank);
  c.alpha = j.value("alpha", d.alpha);
  c.dropout = j.value("dropout", d.dropout);
  if (j.contains("targets")) {
    c.targets.clear();
    for (const auto& t : j.at("targets")) c.targets.push_back(lora_target_from_string(t.get<std::string>()));
  } else {
    c.targets = d.targets;
  }
  const std::string rule = j.value("scaling_rule", std::string("alpha_over_rank"));
  if (rule == "alpha") {
    c.scaling_rule = LoraScaling::alpha;
  } else if (rule == "alpha_over_rank") {
    c.scaling_rule = LoraScaling::alpha_over_rank;
  } else {
    throw ValidationError("lora.scaling_rule must be alpha or alpha_over_rank");
  }
}

template struct LoraLayerT<float>;
template struct LoraLayerT<double>;
template struct LoraAdaptersT<float>;
template struct LoraAdaptersT<double>;
template LoraAdaptersT<double> LoraAdaptersT<float>::cast<double>() const;
template LoraAdaptersT<float> LoraAdaptersT<double>::cast<float>() const;
template LoraAdaptersT<float> LoraAdaptersT<float>::cast<float>() const;
template Vec<float> lora_forward(const Vec<float>&, const Vec<float>&, const LoraLayerT<float>&,
                                 bool, std::uint64_t);
template Vec<double> lora_forward(const Vec<double>&, const Vec<double>&,
                                  const LoraLayerT<double>&, bool, std::uint64_t);

}  // namespace psim
