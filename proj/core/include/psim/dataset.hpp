#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "psim/scene.hpp"

namespace psim {

enum class Split { train, val, test };
std::string_view to_string(Split split);
Split split_from_string(std::string_view name);

struct RecordVote {
  std::string worker_id;
  int choice = 0;
  int round = 0;
  friend bool operator==(const RecordVote&, const RecordVote&) = default;
};

struct TripletRecord {
  std::string id;
  std::string ref_path, a_path, b_path;
  std::string category;
  std::vector<RecordVote> votes;
  std::optional<int> label;
  std::optional<int> oracle_y;
  std::optional<Split> split;
  /// Synthetic data only: foreground masks and per-shape coverage per image.
  std::optional<std::array<std::string, 3>> mask_paths;
  std::optional<std::array<std::array<double, kShapeKindCount>, 3>> category_area;
  std::optional<TripletSpec> spec;

  /// Throws ValidationError when votes are not in strictly increasing rounds
  /// or a label sits on non-unanimous votes.
  void validate() const;
  friend bool operator==(const TripletRecord&, const TripletRecord&) = default;
};

struct Dataset {
  std::vector<TripletRecord> records;

  const TripletRecord* find(std::string_view id) const;
  std::size_t size() const { return records.size(); }
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline constexpr int kDatasetVersion = 1;

/// JSON-lines with a leading {"psim_dataset_version":1} line.
void write_dataset(std::ostream& out, const Dataset& dataset);
Dataset read_dataset(std::istream& in);
void write_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& path);

void to_json(nlohmann::json& j, const TripletRecord& r);
void from_json(const nlohmann::json& j, TripletRecord& r);

/// One 2AFC answer: choice 1 means distortion B was picked as more similar.
struct Judgment {
  std::string worker_id;
  std::string triplet_id;
  int choice = 0;
  int round = 0;
  friend bool operator==(const Judgment&, const Judgment&) = default;
};

struct SentinelResult {
  std::string worker_id;
  bool passed = true;
  int round = 0;
  friend bool operator==(const SentinelResult&, const SentinelResult&) = default;
};

using JudgmentLog = std::vector<Judgment>;

void to_json(nlohmann::json& j, const Judgment& v);
void from_json(const nlohmann::json& j, Judgment& v);
void to_json(nlohmann::json& j, const SentinelResult& v);
void from_json(const nlohmann::json& j, SentinelResult& v);

struct WorkerRecord {
  std::string worker_id;
  std::vector<bool> sentinel_results;
  bool excluded = false;
};

struct ExclusionResult {
  JudgmentLog retained;
  JudgmentLog discarded;
  std::vector<WorkerRecord> workers;  ///< sorted by worker_id
  double excluded_fraction = 0.0;     ///< over workers with any judgment or sentinel
};

/// Drops every judgment by a worker with at least one failed sentinel.
ExclusionResult exclude_workers(const JudgmentLog& log, const std::vector<SentinelResult>& sentinels);

struct RoundCounts {
  int round = 0;
  int input = 0;
  int unanimous = 0;             ///< received a retained vote and stayed unanimous
  int sentinel_carryover = 0;    ///< no retained vote this round; advanced unchanged
  int eliminated = 0;
  int kept = 0;                  ///< unanimous + sentinel_carryover
  friend bool operator==(const RoundCounts&, const RoundCounts&) = default;
};

void to_json(nlohmann::json& j, const RoundCounts& c);

struct RoundResult {
  Dataset pool;  ///< survivors with the new votes appended
  RoundCounts counts;
};

/// new_judgments must already be stripped of excluded workers. Every judgment
/// must name a triplet in the pool, at most once.
RoundResult run_filter_round(const Dataset& pool, const JudgmentLog& new_judgments, int round);

struct RoundInput {
  JudgmentLog judgments;
  std::vector<SentinelResult> sentinels;
};

struct CampaignResult {
  Dataset dataset;  ///< survivors; label = the unanimous choice when any vote exists
  std::vector<RoundCounts> rounds;
  std::vector<std::vector<std::string>> survivors;  ///< ids after each round
};

inline constexpr int kDefaultRounds = 10;

/// Worker exclusion accumulates: a worker failing a sentinel in any round seen
/// so far loses all their judgments from that round on.
CampaignResult run_filter_campaign(const Dataset& pool, const std::vector<RoundInput>& stream,
                                   int rounds = kDefaultRounds);

/// Round-by-round driver used when judgments are produced on the fly.
class FilterCampaign {
 public:
  explicit FilterCampaign(Dataset pool, int max_rounds = kDefaultRounds);

  int round() const { return round_; }
  int max_rounds() const { return max_rounds_; }
  bool finished() const { return round_ >= max_rounds_; }
  const Dataset& pool() const { return pool_; }
  const std::vector<RoundCounts>& history() const { return history_; }
  const std::set<std::string>& excluded_workers() const { return excluded_; }

  /// Runs exclusion and one filter round; returns the round counts.
  RoundCounts advance(const RoundInput& input);
  CampaignResult result() const;

 private:
  Dataset pool_;
  int max_rounds_;
  int round_ = 0;
  std::set<std::string> excluded_;
  std::vector<RoundCounts> history_;
  std::vector<std::vector<std::string>> survivors_;
};

/// Sets label to the unanimous choice (clears it when votes disagree or are absent).
void assign_labels(Dataset& dataset);

enum class JndAnswer { same, different };

struct JndRecord {
  std::string triplet_id;
  std::vector<JndAnswer> pair_a;
  std::vector<JndAnswer> pair_b;
  std::optional<bool> pair_a_identical;
  std::optional<bool> pair_b_identical;
  std::optional<int> s;  ///< 0 = pair A identical, 1 = pair B identical
  bool straddle_failed = false;
  friend bool operator==(const JndRecord&, const JndRecord&) = default;
};

inline constexpr int kJndTrials = 3;

JndRecord label_jnd(const JndRecord& record);

void to_json(nlohmann::json& j, const JndRecord& r);
void from_json(const nlohmann::json& j, JndRecord& r);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

/// Seeded shuffle; the first round(train*n) go to train, the next round(val*n)
/// to val, the rest to test.
void make_splits(Dataset& dataset, const SplitFractions& fractions, std::uint64_t seed);

Dataset select_split(const Dataset& dataset, Split split);

inline constexpr int kDefaultMinVotes = 6;

/// Keeps records with at least threshold votes.
Dataset filter_min_votes(const Dataset& dataset, int threshold = kDefaultMinVotes);

/// CSV with header id,split,label,votes.
void write_split_manifest(std::ostream& out, const Dataset& dataset);

}  // namespace psim
