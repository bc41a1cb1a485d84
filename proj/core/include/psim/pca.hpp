#pragma once

#include <utility>
#include <vector>

#include "psim/metric.hpp"
#include "psim/tensor.hpp"
#include "psim/triplets.hpp"

namespace psim {

struct PcaModel {
  Mat<double> components;  ///< k x D, orthonormal rows
  Vec<double> singular_values;
  Vec<double> mean;  ///< zeros unless centered
  bool centering = false;
  double total_variance = 0.0;  ///< sum of all squared singular values

  int k() const { return static_cast<int>(components.rows()); }
  int dim() const { return static_cast<int>(components.cols()); }
  /// Share of the (optionally centered) sum of squares captured by the kept components.
  double explained_fraction() const;
  Vec<double> project(const Vec<double>& x) const;
  /// Projection of the first `k` components only.
  Vec<double> project(const Vec<double>& x, int k) const;
};

/// Top-k right singular vectors of the N x D matrix; each component's
/// largest-magnitude entry is made positive (first such entry on ties).
PcaModel pca_fit(const Mat<double>& data, int k, bool centering = false);
PcaModel pca_fit(const Mat<float>& data, int k, bool centering = false);

/// Embeddings of every image of every triplet, three rows per triplet.
Mat<float> triplet_embeddings(const MetricModel& model, const TripletSet& set, int jobs = 1);

/// Votes with distances taken between projected embeddings (first k components).
std::vector<Vote> pca_votes(const PcaModel& pca, int k, const Mat<float>& embeddings);

/// (k, 2AFC score) on eval_set after fitting on fit_set embeddings (use the
/// train split) with max(ks) components.
std::vector<std::pair<int, double>> pca_score_sweep(const MetricModel& model, const TripletSet& fit_set,
                                                    const TripletSet& eval_set, const std::vector<int>& ks,
                                                    bool centering = false, int jobs = 1);

}  // namespace psim
