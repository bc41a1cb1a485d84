#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "psim/metric.hpp"

namespace psim {

/// Backbone file: "PSIMW1" header and tensors, then optional "LORA1" and
/// "MLPH1" sections. All integers and floats little-endian.
void write_backbone(std::ostream& out, const Backbone& backbone);
Backbone read_backbone(std::istream& in);
void write_backbone(const std::filesystem::path& path, const Backbone& backbone);
Backbone read_backbone(const std::filesystem::path& path);

/// A model directory holds model.json plus one backbone file per backbone.
void save_model(const std::filesystem::path& dir, const MetricModel& model);
MetricModel load_model(const std::filesystem::path& dir);

/// "PSIME1" embedding dump: count x dim float matrix plus the model name.
struct EmbeddingDump {
  std::string model_name;
  Mat<float> matrix;
};

/// Hex FNV-1a over the base backbone tensors only (adapters excluded).
std::string base_weights_hash(const ViTWeights& weights);
std::string adapters_hash(const MetricModel& model);
std::string model_hash(const MetricModel& model);

void write_embeddings(const std::filesystem::path& path, const EmbeddingDump& dump);
EmbeddingDump read_embeddings(const std::filesystem::path& path);

}  // namespace psim
