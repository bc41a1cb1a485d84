#include "psim/inversion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "psim/error.hpp"
#include "psim/random.hpp"

namespace psim {

std::string_view to_string(InversionInit init) { return init == InversionInit::noise ? "noise" : "gray"; }

InversionInit inversion_init_from_string(std::string_view name) {
  if (name == "noise") return InversionInit::noise;
  if (name == "gray") return InversionInit::gray;
  throw ValidationError("unknown inversion init '" + std::string(name) + "'");
}

void InversionConfig::validate() const {
  if (steps < 1) throw ValidationError("inversion steps must be >= 1");
  if (!(step_size > 0.0)) throw ValidationError("inversion step_size must be > 0");
  if (!(tv_weight >= 0.0)) throw ValidationError("inversion tv_weight must be >= 0");
}

void to_json(nlohmann::json& j, const InversionConfig& c) {
  j = {{"steps", c.steps}, {"step_size", c.step_size}, {"tv_weight", c.tv_weight},
       {"init", to_string(c.init)}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, InversionConfig& c) {
  c.steps = j.value("steps", c.steps);
  c.step_size = j.value("step_size", c.step_size);
  c.tv_weight = j.value("tv_weight", c.tv_weight);
  if (j.contains("init")) c.init = inversion_init_from_string(j.at("init").get<std::string>());
  c.seed = j.value("seed", c.seed);
}

double total_variation(const Image& image) {
  double s = 0.0;
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = image.at(y, x, c);
        if (x + 1 < image.width()) {
          const double d = image.at(y, x + 1, c) - v;
          s += d * d;
        }
        if (y + 1 < image.height()) {
          const double d = image.at(y + 1, x, c) - v;
          s += d * d;
        }
      }
    }
  }
  return s / static_cast<double>(image.pixel_count());
}

std::vector<double> total_variation_grad(const Image& image) {
  std::vector<double> g(image.pixel_count() * 3, 0.0);
  const double scale = 2.0 / static_cast<double>(image.pixel_count());
  const auto idx = [&](int y, int x, int c) { return (static_cast<std::size_t>(y) * image.width() + x) * 3 + c; };
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = image.at(y, x, c);
        if (x + 1 < image.width()) {
          const double d = scale * (image.at(y, x + 1, c) - v);
          g[idx(y, x + 1, c)] += d;
          g[idx(y, x, c)] -= d;
        }
        if (y + 1 < image.height()) {
          const double d = scale * (image.at(y + 1, x, c) - v);
          g[idx(y + 1, x, c)] += d;
          g[idx(y, x, c)] -= d;
        }
      }
    }
  }
  return g;
}

Image inversion_init(const InversionConfig& config, int size) {
  Image img(size, size, Rgb{0.5f, 0.5f, 0.5f});
  if (config.init == InversionInit::noise) {
    Rng rng(hash_combine(config.seed, 0x1e5e));
    for (float& v : img.data()) v = static_cast<float>(rng.uniform());
  }
  return img;
}

InversionResult invert_embedding(const MetricModel& model, const Vec<float>& target, const InversionConfig& config) {
  config.validate();
  if (target.size() != model.embedding_dim()) {
    throw ValidationError("target embedding has length " + std::to_string(target.size()) + ", model produces " +
                          std::to_string(model.embedding_dim()));
  }
  InversionResult r;
  r.image = inversion_init(config, model.input_size());
  const auto data = r.image.data();
  for (int step = 0;; ++step) {
    EmbedTape<float> tape;
    const Vec<float> e = embed<float>(model, std::span<const float>(data.data(), data.size()), {}, &tape);
    const double dist = cosine_distance<float>(e, target);
    const double loss = dist + config.tv_weight * total_variation(r.image);
    if (!std::isfinite(loss)) throw NumericError("inversion loss is not finite at step " + std::to_string(step));
    r.loss_trace.push_back(loss);
    r.distance_trace.push_back(dist);
    if (step == config.steps) break;

    Vec<float> ge = Vec<float>::Zero(e.size());
    cosine_distance_backward<float>(e, target, 1.0f, &ge, nullptr);
    std::vector<float> gp;
    embed_backward<float>(model, tape, ge, nullptr, &gp);
    const auto gtv = total_variation_grad(r.image);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = gp[i] + config.tv_weight * gtv[i];
      data[i] = static_cast<float>(std::clamp(data[i] - config.step_size * g, 0.0, 1.0));
    }
  }
  return r;
}

InversionResult invert_embedding(const MetricModel& model, const Image& target, const InversionConfig& config) {
  return invert_embedding(model, embed(model, prepare_image(model, target)), config);
}

}  // namespace psim
