#include "psim/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "psim/error.hpp"
#include "psim/training.hpp"

namespace psim {

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = {{"metric", r.metric},         {"score_2afc", r.score_2afc},   {"score_jnd", r.score_jnd},
       {"n_triplets", r.n_triplets}, {"tie_count", r.tie_count}, {"ci_half_width", r.ci_half_width}};
}

double ci_half_width(double p, int n) {
  if (n <= 0) throw ValidationError("confidence interval needs n > 0");
  return 1.96 * std::sqrt(p * (1.0 - p) / n);
}

EvalReport score_2afc(const std::vector<Vote>& votes, const std::vector<int>& labels, std::string metric) {
  if (votes.empty()) throw ValidationError("score_2afc on an empty triplet set");
  if (votes.size() != labels.size()) throw ValidationError("score_2afc: votes and labels differ in length");
  EvalReport r;
  r.metric = std::move(metric);
  r.n_triplets = static_cast<int>(votes.size());
  int agree = 0;
  for (std::size_t i = 0; i < votes.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ValidationError("score_2afc: label must be 0 or 1");
    agree += votes[i].y_hat == labels[i] ? 1 : 0;
    r.tie_count += votes[i].tie ? 1 : 0;
  }
  r.score_2afc = static_cast<double>(agree) / r.n_triplets;
  r.ci_half_width = ci_half_width(r.score_2afc, r.n_triplets);
  return r;
}

EvalReport score_2afc(const MetricModel& model, const TripletSet& set, int jobs) {
  if (set.empty()) throw ValidationError("score_2afc on an empty triplet set");
  std::vector<int> labels;
  for (const auto& t : set) labels.push_back(t.label);
  return score_2afc(predict_votes(model, set, jobs), labels, model.name);
}

EvalReport score_jnd(const std::vector<Vote>& votes, const std::vector<JndRecord>& records,
                     std::string metric) {
  if (records.empty()) throw ValidationError("score_jnd on an empty set");
  if (votes.size() != records.size()) throw ValidationError("score_jnd: votes and records differ in length");
  EvalReport r;
  r.metric = std::move(metric);
  r.n_triplets = static_cast<int>(records.size());
  int agree = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].straddle_failed || !records[i].s) {
      throw ValidationError("score_jnd: record " + records[i].triplet_id +
                            " has no JND choice (filter straddle failures first)");
    }
    agree += votes[i].y_hat == *records[i].s ? 1 : 0;
    r.tie_count += votes[i].tie ? 1 : 0;
  }
  r.score_jnd = static_cast<double>(agree) / r.n_triplets;
  r.ci_half_width = ci_half_width(r.score_jnd, r.n_triplets);
  return r;
}

namespace {

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw ValidationError("correlation undefined: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

Correlation correlate_scores(const std::vector<std::pair<double, double>>& scores) {
  if (scores.size() < 3) throw ValidationError("correlation needs at least 3 metrics");
  std::vector<double> x, y;
  for (const auto& [a, b] : scores) {
    x.push_back(a);
    y.push_back(b);
  }
  return {pearson(x, y), pearson(average_ranks(x), average_ranks(y))};
}

}  // namespace psim
