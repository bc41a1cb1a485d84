#pragma once

#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "psim/dataset.hpp"
#include "psim/metric.hpp"
#include "psim/triplets.hpp"

namespace psim {

struct EvalReport {
  std::string metric;
  double score_2afc = 0.0;
  double score_jnd = 0.0;
  int n_triplets = 0;
  int tie_count = 0;
  double ci_half_width = 0.0;  ///< of score_2afc, normal approximation
};

void to_json(nlohmann::json& j, const EvalReport& r);

/// 1.96 * sqrt(p (1 - p) / n).
double ci_half_width(double p, int n);

/// Agreement of predicted votes with labels; ties count as y_hat = 0 and are tallied.
EvalReport score_2afc(const std::vector<Vote>& votes, const std::vector<int>& labels,
                      std::string metric = "metric");
EvalReport score_2afc(const MetricModel& model, const TripletSet& set, int jobs = 1);

/// Agreement of predicted votes with the JND choice s; straddle-failed or
/// unlabeled records are rejected.
EvalReport score_jnd(const std::vector<Vote>& votes, const std::vector<JndRecord>& records,
                     std::string metric = "metric");

struct Correlation {
  double pearson = 0.0;
  double spearman = 0.0;
};

/// Pearson r and Spearman rho (average ranks for ties) over (2AFC, JND) pairs.
Correlation correlate_scores(const std::vector<std::pair<double, double>>& scores);

}  // namespace psim
