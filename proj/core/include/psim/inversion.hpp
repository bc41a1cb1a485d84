#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "psim/image.hpp"
#include "psim/metric.hpp"

namespace psim {

enum class InversionInit { noise, gray };

std::string_view to_string(InversionInit init);
InversionInit inversion_init_from_string(std::string_view name);

struct InversionConfig {
  int steps = 500;
  double step_size = 0.05;
  double tv_weight = 1e-3;
  InversionInit init = InversionInit::noise;
  std::uint64_t seed = 0;
  void validate() const;
};

void to_json(nlohmann::json& j, const InversionConfig& c);
void from_json(const nlohmann::json& j, InversionConfig& c);

/// Squared differences between horizontal and vertical neighbours, summed over
/// channels and divided by the pixel count.
double total_variation(const Image& image);
/// Gradient of total_variation, same layout as Image::data().
std::vector<double> total_variation_grad(const Image& image);

Image inversion_init(const InversionConfig& config, int size);

struct InversionResult {
  Image image;
  std::vector<double> loss_trace;      ///< objective at every iterate, steps + 1 entries
  std::vector<double> distance_trace;  ///< cosine-distance part of the objective
};

/// Plain gradient descent on cosine_distance(embed(x), target) + tv_weight * TV(x),
/// clamping pixels to [0,1] after every step.
InversionResult invert_embedding(const MetricModel& model, const Vec<float>& target, const InversionConfig& config);
InversionResult invert_embedding(const MetricModel& model, const Image& target, const InversionConfig& config);

}  // namespace psim
