#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "psim/dataset.hpp"

namespace psim {

enum class JndProfile { main, sm };

struct JndCounts {
  int distorted = 0;
  int identical = 0;
};

/// main: 48 distorted + 24 identical pairs; sm: 24 + 12.
JndCounts jnd_counts(JndProfile profile);
std::string_view to_string(JndProfile profile);
JndProfile jnd_profile_from_string(std::string_view name);

struct CampaignConfig {
  int practice_tasks = 2;
  int real_tasks = 50;
  int sentinels = 10;
  int max_rounds = kDefaultRounds;
  JndProfile jnd_profile = JndProfile::main;
  int display_ms = 500;
  int gap_ms = 1000;
  std::uint64_t seed = 0;
  void validate() const;
};

void to_json(nlohmann::json& j, const CampaignConfig& c);
void from_json(const nlohmann::json& j, CampaignConfig& c);

/// Status code plus JSON body; the HTTP layer forwards both unchanged.
struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

struct JndObservation {
  std::string worker_id;
  std::string triplet_id;
  int pair = 0;  ///< 0 = (reference, A), 1 = (reference, B), -1 = identical catch pair
  JndAnswer answer = JndAnswer::same;
  int round = 0;
};

/// Campaign logic behind the HTTP endpoints. All methods lock one mutex, so
/// judgments are appended by a single writer in arrival order.
class AnnotationService {
 public:
  /// When log_path is non-empty every accepted event is appended to it as one
  /// JSON line; an existing log is replayed first.
  AnnotationService(Dataset pool, CampaignConfig config, std::filesystem::path log_path = {});

  ApiResponse create_session(std::string_view kind, std::string worker_id = {});
  ApiResponse post_judgment(const nlohmann::json& body);
  ApiResponse advance_round();
  ApiResponse state() const;
  /// Header line (with per-round counts) followed by the labeled survivors.
  std::string export_snapshot() const;

  /// File behind an image token handed out in a session payload.
  std::optional<std::string> image_path(std::string_view token) const;

  /// Records for triplets whose two pairs each have at least three answers
  /// (the first three are used), labeled with label_jnd.
  std::vector<JndRecord> jnd_records() const;

  JudgmentLog judgments() const;
  std::vector<SentinelResult> sentinel_results() const;
  int round() const;

 private:
  struct Task {
    bool practice = false;
    bool sentinel = false;
    std::string triplet_id;
    bool swapped = false;        ///< shown A is distortion B
    int duplicate_position = 0;  ///< sentinels: 0 = shown A is the duplicate
    std::string distractor_id;
    std::vector<int> jnd_pairs;  ///< per question: 0, 1 or -1
    std::vector<std::string> jnd_triplets;
    bool answered = false;
  };
  struct Session {
    std::string id;
    std::string worker_id;
    std::string kind;
    int round = 0;
    std::vector<Task> tasks;
    int completed = 0;
    bool open() const;
  };

  ApiResponse create_2afc(Session& s, std::uint64_t session_key);
  ApiResponse create_jnd(Session& s, std::uint64_t session_key);
  std::string image_token(std::uint64_t session_key, std::size_t task, int slot, const std::string& path);
  void append_event(const nlohmann::json& event);
  void apply_event(const nlohmann::json& event);
  void replay();
  std::vector<std::string> round_order();
  nlohmann::json state_json() const;

  mutable std::mutex mutex_;
  CampaignConfig config_;
  FilterCampaign campaign_;
  std::map<std::string, TripletRecord> records_;  ///< every pool record by id
  std::filesystem::path log_path_;
  std::ofstream log_;

  std::map<std::string, Session> sessions_;
  std::uint64_t session_counter_ = 0;
  std::map<std::string, std::string> tokens_;
  std::set<std::string> assigned_this_round_;
  std::map<std::string, std::set<std::string>> seen_2afc_;
  std::map<std::string, std::set<std::string>> seen_jnd_;

  JudgmentLog all_judgments_;
  std::vector<SentinelResult> all_sentinels_;
  JudgmentLog round_judgments_;
  std::vector<SentinelResult> round_sentinels_;
  std::vector<JndObservation> jnd_;
};

}  // namespace psim
