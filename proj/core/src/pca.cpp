#include "psim/pca.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/SVD>

#include "psim/error.hpp"
#include "psim/parallel.hpp"

namespace psim {

double PcaModel::explained_fraction() const {
  if (total_variance <= 0.0) return 0.0;
  return singular_values.squaredNorm() / total_variance;
}

Vec<double> PcaModel::project(const Vec<double>& x) const { return project(x, k()); }

Vec<double> PcaModel::project(const Vec<double>& x, int k) const {
  if (x.size() != dim()) {
    throw ValidationError("PCA input has dimension " + std::to_string(x.size()) + ", expected " +
                          std::to_string(dim()));
  }
  if (k < 1 || k > this->k()) throw ValidationError("PCA projection k out of range");
  return components.topRows(k) * (x - mean);
}

PcaModel pca_fit(const Mat<double>& data, int k, bool centering) {
  const auto n = static_cast<int>(data.rows());
  const auto d = static_cast<int>(data.cols());
  if (k < 1 || k > std::min(n, d)) {
    throw ValidationError("PCA k=" + std::to_string(k) + " exceeds min(N, D) = " + std::to_string(std::min(n, d)));
  }
  if (!data.allFinite()) throw NumericError("PCA input contains non-finite values");
  PcaModel pca;
  pca.centering = centering;
  pca.mean = centering ? Vec<double>(data.colwise().mean().transpose()) : Vec<double>::Zero(d);
  Eigen::MatrixXd x = data;
  if (centering) x.rowwise() -= pca.mean.transpose();

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinV);
  const Eigen::MatrixXd& v = svd.matrixV();
  pca.components.resize(k, d);
  for (int i = 0; i < k; ++i) {
    Vec<double> c = v.col(i);
    Eigen::Index arg = 0;
    for (Eigen::Index j = 1; j < c.size(); ++j) {
      if (std::abs(c[j]) > std::abs(c[arg])) arg = j;
    }
    if (c[arg] < 0.0) c = -c;
    pca.components.row(i) = c.transpose();
  }
  pca.singular_values = svd.singularValues().head(k);
  pca.total_variance = svd.singularValues().squaredNorm();
  return pca;
}

PcaModel pca_fit(const Mat<float>& data, int k, bool centering) {
  return pca_fit(Mat<double>(data.cast<double>()), k, centering);
}

Mat<float> triplet_embeddings(const MetricModel& model, const TripletSet& set, int jobs) {
  Mat<float> out(static_cast<Eigen::Index>(set.size() * 3), model.embedding_dim());
  parallel_for(set.size() * 3, jobs, [&](std::size_t i) {
    out.row(static_cast<Eigen::Index>(i)) = embed<float>(model, set[i / 3].images[i % 3].data()).transpose();
  });
  return out;
}

std::vector<Vote> pca_votes(const PcaModel& pca, int k, const Mat<float>& embeddings) {
  if (embeddings.rows() % 3 != 0) throw ValidationError("embedding rows are not a multiple of 3");
  std::vector<Vote> votes(static_cast<std::size_t>(embeddings.rows() / 3));
  for (std::size_t t = 0; t < votes.size(); ++t) {
    const auto row = [&](int s) {
      return pca.project(Vec<double>(embeddings.row(static_cast<Eigen::Index>(3 * t + s)).transpose().cast<double>()), k);
    };
    const Vec<double> r = row(0);
    votes[t] = vote_from_distances(cosine_distance<double>(r, row(1)), cosine_distance<double>(r, row(2)));
  }
  return votes;
}

std::vector<std::pair<int, double>> pca_score_sweep(const MetricModel& model, const TripletSet& fit_set,
                                                    const TripletSet& eval_set, const std::vector<int>& ks,
                                                    bool centering, int jobs) {
  if (ks.empty()) throw ValidationError("PCA sweep needs at least one k");
  if (eval_set.empty()) throw ValidationError("PCA sweep on an empty evaluation set");
  const int kmax = *std::max_element(ks.begin(), ks.end());
  const PcaModel pca = pca_fit(triplet_embeddings(model, fit_set, jobs), kmax, centering);
  const Mat<float> eval = triplet_embeddings(model, eval_set, jobs);
  std::vector<std::pair<int, double>> out;
  for (int k : ks) {
    const auto votes = pca_votes(pca, k, eval);
    int correct = 0;
    for (std::size_t i = 0; i < votes.size(); ++i) correct += votes[i].y_hat == eval_set[i].label ? 1 : 0;
    out.emplace_back(k, static_cast<double>(correct) / static_cast<double>(votes.size()));
  }
  return out;
}

}  // namespace psim
