#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "psim/dataset.hpp"

namespace psim {

struct AnnotatorConfig {
  double flip_prob = 0.0;           ///< chance a judgment disagrees with the oracle, in [0,1)
  double sentinel_fail_prob = 0.0;  ///< chance each sentinel is failed, in [0,1]
  int sentinels = 10;
  std::uint64_t seed = 0;
};

struct AnnotatorOutput {
  JudgmentLog judgments;
  std::vector<SentinelResult> sentinels;
};

/// One simulated worker answering tasks given as (triplet id, oracle label).
/// Every draw is keyed by (seed, worker, triplet or sentinel slot, round), so
/// results do not depend on task order.
AnnotatorOutput simulate_annotator(const std::string& worker_id,
                                   const std::vector<std::pair<std::string, int>>& tasks, int round,
                                   const AnnotatorConfig& config);

/// Key helpers shared with tests that re-derive the simulation.
std::uint64_t judgment_key(std::uint64_t seed, const std::string& worker_id,
                           const std::string& triplet_id, int round);
std::uint64_t sentinel_key(std::uint64_t seed, const std::string& worker_id, int slot, int round);

struct CampaignSimConfig {
  double flip_prob = 0.15;
  double failing_worker_fraction = 0.1;
  int tasks_per_worker = 50;
  int sentinels_per_worker = 10;
  int rounds = kDefaultRounds;
  std::uint64_t seed = 0;
};

/// Workers for a round: the pool is shuffled with Rng(hash(seed, round)) and
/// cut into consecutive HITs of tasks_per_worker; worker k is named
/// "r<round>-w<k>" and fails every sentinel when its draw falls under
/// failing_worker_fraction. Requires oracle_y on every record.
RoundInput simulate_round(const Dataset& pool, int round, const CampaignSimConfig& config);

CampaignResult simulate_campaign(const Dataset& pool, const CampaignSimConfig& config);

}  // namespace psim
