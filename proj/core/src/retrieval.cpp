#include "psim/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include "psim/checkpoint.hpp"
#include "psim/error.hpp"
#include "psim/parallel.hpp"

namespace psim {

namespace {

constexpr std::size_t kBlock = 16;

bool hit_less(const Hit& a, const Hit& b) {
  return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
}

std::vector<Hit> select_topk(const EmbeddingIndex& index, const std::vector<double>& dist, std::size_t k) {
  std::vector<Hit> hits(index.size());
  for (std::size_t i = 0; i < hits.size(); ++i) hits[i] = {index.ids()[i], dist[i]};
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), hit_less);
  hits.resize(k);
  return hits;
}

void check_query(const EmbeddingIndex& index, const Vec<float>& query, std::size_t k) {
  if (k < 1 || k > index.size()) {
    throw ValidationError("k=" + std::to_string(k) + " outside [1, " + std::to_string(index.size()) + "]");
  }
  if (query.size() != index.dim()) {
    throw ValidationError("query dimension " + std::to_string(query.size()) + " does not match index dimension " +
                          std::to_string(index.dim()));
  }
}

}  // namespace

EmbeddingIndex::EmbeddingIndex(std::vector<std::string> ids, const Mat<float>& embeddings,
                               std::string model_name, std::string model_hash)
    : ids_(std::move(ids)), matrix_(embeddings), model_name_(std::move(model_name)),
      model_hash_(std::move(model_hash)) {
  if (ids_.empty()) throw ValidationError("index needs at least one item");
  if (ids_.size() != static_cast<std::size_t>(matrix_.rows())) {
    throw ValidationError("index has " + std::to_string(ids_.size()) + " ids but " +
                          std::to_string(matrix_.rows()) + " rows");
  }
  std::unordered_set<std::string> seen;
  for (const auto& id : ids_) {
    if (!seen.insert(id).second) throw ValidationError("duplicate index id '" + id + "'");
  }
  for (Eigen::Index r = 0; r < matrix_.rows(); ++r) {
    const double norm = matrix_.row(r).cast<double>().norm();
    if (!(norm >= kMinEmbeddingNorm)) throw NumericError("index row '" + ids_[r] + "' has a degenerate embedding");
    matrix_.row(r) = (matrix_.row(r).cast<double>() / norm).cast<float>();
  }
  const std::size_t n = ids_.size();
  columns_.resize(n * static_cast<std::size_t>(dim()));
  for (std::size_t i = 0; i < n; ++i) {
    for (int j = 0; j < dim(); ++j) columns_[static_cast<std::size_t>(j) * n + i] = matrix_(i, j);
  }
}

EmbeddingIndex build_index(const MetricModel& model, const std::vector<std::string>& ids,
                           const std::vector<Image>& images, int jobs) {
  if (images.empty()) throw ValidationError("cannot index an empty image set");
  if (ids.size() != images.size()) throw ValidationError("ids and images differ in length");
  Mat<float> emb(static_cast<Eigen::Index>(images.size()), model.embedding_dim());
  parallel_for(images.size(), jobs, [&](std::size_t i) {
    try {
      emb.row(static_cast<Eigen::Index>(i)) = embed(model, images[i]).transpose();
    } catch (const std::exception& e) {
      throw NumericError("embedding image '" + ids[i] + "' failed: " + e.what());
    }
  });
  return EmbeddingIndex(ids, emb, model.name, model_hash(model));
}

std::vector<double> normalized_query(const Vec<float>& query) {
  const Vec<double> q = query.cast<double>();
  const double norm = q.norm();
  if (!(norm >= kMinEmbeddingNorm)) throw NumericError("query embedding is degenerate");
  std::vector<double> out(static_cast<std::size_t>(q.size()));
  for (Eigen::Index j = 0; j < q.size(); ++j) out[j] = q[j] / norm;
  return out;
}

double index_distance(const EmbeddingIndex& index, std::size_t row, const std::vector<double>& unit_query) {
  double dot = 0.0;
  for (int j = 0; j < index.dim(); ++j) dot += static_cast<double>(index.matrix()(row, j)) * unit_query[j];
  return 1.0 - dot;
}

std::vector<Hit> query_topk_exhaustive(const EmbeddingIndex& index, const Vec<float>& query, std::size_t k) {
  check_query(index, query, k);
  const auto q = normalized_query(query);
  std::vector<double> dist(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) dist[i] = index_distance(index, i, q);
  return select_topk(index, dist, k);
}

std::vector<Hit> query_topk(const EmbeddingIndex& index, const Vec<float>& query, std::size_t k) {
  check_query(index, query, k);
  const auto q = normalized_query(query);
  const std::size_t n = index.size();
  const float* cols = index.columns().data();
  std::vector<double> dist(n);
  // Each item keeps its own accumulator in dimension order, so the sums are
  // bit-identical to the per-item scan; the inner loop runs across items.
  for (std::size_t start = 0; start < n; start += kBlock) {
    const std::size_t len = std::min(kBlock, n - start);
    double acc[kBlock] = {};
    for (int j = 0; j < index.dim(); ++j) {
      const float* col = cols + static_cast<std::size_t>(j) * n + start;
      const double qj = q[j];
      for (std::size_t r = 0; r < len; ++r) acc[r] += static_cast<double>(col[r]) * qj;
    }
    for (std::size_t r = 0; r < len; ++r) dist[start + r] = 1.0 - acc[r];
  }
  return select_topk(index, dist, k);
}

std::vector<Hit> query_topk(const MetricModel& model, const EmbeddingIndex& index, const Image& query,
                            std::size_t k) {
  return query_topk(index, embed(model, prepare_image(model, query)), k);
}

void write_index(const std::filesystem::path& path, const EmbeddingIndex& index) {
  write_embeddings(path, {index.model_name(), index.matrix()});
  std::ofstream ids(path.string() + ".ids");
  if (!ids) throw IoError("cannot write " + path.string() + ".ids");
  ids << "# model_hash " << index.model_hash() << "\n";
  for (const auto& id : index.ids()) ids << id << "\n";
  if (!ids) throw IoError("failed writing " + path.string() + ".ids");
}

EmbeddingIndex read_index(const std::filesystem::path& path) {
  EmbeddingDump dump = read_embeddings(path);
  std::ifstream in(path.string() + ".ids");
  if (!in) throw IoError("cannot read " + path.string() + ".ids");
  std::string line, hash;
  std::vector<std::string> ids;
  while (std::getline(in, line)) {
    if (line.rfind("# model_hash ", 0) == 0) {
      hash = line.substr(13);
      continue;
    }
    if (!line.empty()) ids.push_back(line);
  }
  return EmbeddingIndex(std::move(ids), dump.matrix, dump.model_name, hash);
}

}  // namespace psim
