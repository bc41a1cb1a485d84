#include "psim/annotator.hpp"

#include <numeric>

#include "psim/error.hpp"
#include "psim/hash.hpp"
#include "psim/random.hpp"

namespace psim {

std::uint64_t judgment_key(std::uint64_t seed, const std::string& worker_id,
                           const std::string& triplet_id, int round) {
  std::uint64_t k = hash_combine(seed, fnv1a64(worker_id));
  k = hash_combine(k, fnv1a64(triplet_id));
  return hash_combine(k, static_cast<std::uint64_t>(round));
}

std::uint64_t sentinel_key(std::uint64_t seed, const std::string& worker_id, int slot, int round) {
  std::uint64_t k = hash_combine(seed ^ 0x5e47ULL, fnv1a64(worker_id));
  k = hash_combine(k, static_cast<std::uint64_t>(slot));
  return hash_combine(k, static_cast<std::uint64_t>(round));
}

AnnotatorOutput simulate_annotator(const std::string& worker_id,
                                   const std::vector<std::pair<std::string, int>>& tasks, int round,
                                   const AnnotatorConfig& config) {
  if (!(config.flip_prob >= 0.0 && config.flip_prob < 1.0)) {
    throw ValidationError("flip_prob must be in [0,1)");
  }
  if (!(config.sentinel_fail_prob >= 0.0 && config.sentinel_fail_prob <= 1.0)) {
    throw ValidationError("sentinel_fail_prob must be in [0,1]");
  }
  AnnotatorOutput out;
  for (const auto& [id, oracle] : tasks) {
    const bool flip = counter_uniform(judgment_key(config.seed, worker_id, id, round)) < config.flip_prob;
    out.judgments.push_back({worker_id, id, flip ? 1 - oracle : oracle, round});
  }
  for (int s = 0; s < config.sentinels; ++s) {
    const bool fail =
        counter_uniform(sentinel_key(config.seed, worker_id, s, round)) < config.sentinel_fail_prob;
    out.sentinels.push_back({worker_id, !fail, round});
  }
  return out;
}

RoundInput simulate_round(const Dataset& pool, int round, const CampaignSimConfig& config) {
  if (config.tasks_per_worker < 1) throw ValidationError("tasks_per_worker must be >= 1");
  std::vector<std::size_t> order(pool.records.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(hash_combine(config.seed, static_cast<std::uint64_t>(round)));
  rng.shuffle(order.begin(), order.end());

  RoundInput input;
  for (std::size_t start = 0, k = 0; start < order.size(); start += config.tasks_per_worker, ++k) {
    const std::string worker = "r" + std::to_string(round) + "-w" + std::to_string(k);
    std::vector<std::pair<std::string, int>> tasks;
    for (std::size_t i = start; i < std::min(order.size(), start + config.tasks_per_worker); ++i) {
      const auto& r = pool.records[order[i]];
      if (!r.oracle_y) throw ValidationError("triplet " + r.id + " has no oracle_y to simulate from");
      tasks.emplace_back(r.id, *r.oracle_y);
    }
    const bool failing =
        counter_uniform(hash_combine(hash_combine(config.seed, fnv1a64(worker)), 0xfa11ULL)) <
        config.failing_worker_fraction;
    AnnotatorConfig ac{config.flip_prob, failing ? 1.0 : 0.0, config.sentinels_per_worker, config.seed};
    auto out = simulate_annotator(worker, tasks, round, ac);
    input.judgments.insert(input.judgments.end(), out.judgments.begin(), out.judgments.end());
    input.sentinels.insert(input.sentinels.end(), out.sentinels.begin(), out.sentinels.end());
  }
  return input;
}

CampaignResult simulate_campaign(const Dataset& pool, const CampaignSimConfig& config) {
  FilterCampaign campaign(pool, config.rounds);
  while (!campaign.finished()) {
    campaign.advance(simulate_round(campaign.pool(), campaign.round() + 1, config));
  }
  return campaign.result();
}

}  // namespace psim
