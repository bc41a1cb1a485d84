#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "psim/image.hpp"
#include "psim/metric.hpp"

namespace psim {

/// Row-normalized embeddings with their ids. The column-major copy backs the
/// blocked scan.
class EmbeddingIndex {
 public:
  EmbeddingIndex() = default;
  /// Normalizes each row; ids must be unique and match the row count.
  EmbeddingIndex(std::vector<std::string> ids, const Mat<float>& embeddings, std::string model_name,
                 std::string model_hash);

  std::size_t size() const { return ids_.size(); }
  int dim() const { return static_cast<int>(matrix_.cols()); }
  const std::vector<std::string>& ids() const { return ids_; }
  const Mat<float>& matrix() const { return matrix_; }
  const std::string& model_name() const { return model_name_; }
  const std::string& model_hash() const { return model_hash_; }
  const std::vector<float>& columns() const { return columns_; }

 private:
  std::vector<std::string> ids_;
  Mat<float> matrix_;
  std::vector<float> columns_;  ///< dim x size, column-major over items
  std::string model_name_;
  std::string model_hash_;
};

struct Hit {
  std::string id;
  double distance = 0.0;
  friend bool operator==(const Hit&, const Hit&) = default;
};

EmbeddingIndex build_index(const MetricModel& model, const std::vector<std::string>& ids,
                           const std::vector<Image>& images, int jobs = 1);

/// Distance used by every scan: 1 minus the double dot product of the
/// normalized query with the row, accumulated in dimension order.
double index_distance(const EmbeddingIndex& index, std::size_t row, const std::vector<double>& unit_query);

std::vector<double> normalized_query(const Vec<float>& query);

/// Top k by ascending distance, ties broken by id. The blocked scan is the
/// default; scan_exhaustive is the per-item reference path.
std::vector<Hit> query_topk(const EmbeddingIndex& index, const Vec<float>& query, std::size_t k);
std::vector<Hit> query_topk_exhaustive(const EmbeddingIndex& index, const Vec<float>& query, std::size_t k);
std::vector<Hit> query_topk(const MetricModel& model, const EmbeddingIndex& index, const Image& query,
                            std::size_t k);

/// Writes the PSIME1 dump at path and the id manifest at path + ".ids".
void write_index(const std::filesystem::path& path, const EmbeddingIndex& index);
EmbeddingIndex read_index(const std::filesystem::path& path);

}  // namespace psim
