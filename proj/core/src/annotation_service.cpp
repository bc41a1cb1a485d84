#include "psim/annotation_service.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>

#include "psim/error.hpp"
#include "psim/hash.hpp"
#include "psim/random.hpp"

namespace psim {

namespace {

ApiResponse error_response(int status, const std::string& message) {
  return {status, {{"error", message}}};
}

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string_view answer_name(JndAnswer a) { return a == JndAnswer::same ? "same" : "different"; }

std::optional<JndAnswer> parse_answer(const nlohmann::json& j) {
  if (!j.is_string()) return std::nullopt;
  const auto s = j.get<std::string>();
  if (s == "same") return JndAnswer::same;
  if (s == "different") return JndAnswer::different;
  return std::nullopt;
}

}  // namespace

JndCounts jnd_counts(JndProfile profile) {
  return profile == JndProfile::main ? JndCounts{48, 24} : JndCounts{24, 12};
}

std::string_view to_string(JndProfile profile) { return profile == JndProfile::main ? "main" : "sm"; }

JndProfile jnd_profile_from_string(std::string_view name) {
  if (name == "main") return JndProfile::main;
  if (name == "sm") return JndProfile::sm;
  throw ValidationError("unknown JND profile '" + std::string(name) + "'");
}

void CampaignConfig::validate() const {
  if (practice_tasks < 0) throw ValidationError("practice_tasks must be >= 0");
  if (real_tasks < 1) throw ValidationError("real_tasks must be >= 1");
  if (sentinels < 0) throw ValidationError("sentinels must be >= 0");
  if (max_rounds < 1) throw ValidationError("max_rounds must be >= 1");
  if (display_ms < 1 || gap_ms < 0) throw ValidationError("display_ms must be >= 1 and gap_ms >= 0");
  const auto c = jnd_counts(jnd_profile);
  if ((c.distorted + c.identical) % 2 != 0) throw ValidationError("JND pair count must be even");
}

void to_json(nlohmann::json& j, const CampaignConfig& c) {
  j = {{"practice_tasks", c.practice_tasks}, {"real_tasks", c.real_tasks}, {"sentinels", c.sentinels},
       {"max_rounds", c.max_rounds},         {"jnd_profile", to_string(c.jnd_profile)},
       {"display_ms", c.display_ms},         {"gap_ms", c.gap_ms},      {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, CampaignConfig& c) {
  c.practice_tasks = j.value("practice_tasks", c.practice_tasks);
  c.real_tasks = j.value("real_tasks", c.real_tasks);
  c.sentinels = j.value("sentinels", c.sentinels);
  c.max_rounds = j.value("max_rounds", c.max_rounds);
  if (j.contains("jnd_profile")) c.jnd_profile = jnd_profile_from_string(j.at("jnd_profile").get<std::string>());
  c.display_ms = j.value("display_ms", c.display_ms);
  c.gap_ms = j.value("gap_ms", c.gap_ms);
  c.seed = j.value("seed", c.seed);
}

bool AnnotationService::Session::open() const {
  if (kind != "2afc") return false;
  return std::any_of(tasks.begin(), tasks.end(), [](const Task& t) { return !t.practice && !t.answered; });
}

AnnotationService::AnnotationService(Dataset pool, CampaignConfig config, std::filesystem::path log_path)
    : config_(config), campaign_(pool, config.max_rounds), log_path_(std::move(log_path)) {
  config_.validate();
  for (const auto& r : pool.records) {
    if (!records_.emplace(r.id, r).second) throw ValidationError("duplicate triplet id '" + r.id + "' in pool");
  }
  if (!log_path_.empty()) {
    if (std::filesystem::exists(log_path_)) replay();
    log_.open(log_path_, std::ios::app);
    if (!log_) throw IoError("cannot open judgment log " + log_path_.string());
  }
}

int AnnotationService::round() const {
  std::lock_guard lock(mutex_);
  return campaign_.round() + 1;
}

std::vector<std::string> AnnotationService::round_order() {
  std::vector<std::string> ids;
  for (const auto& r : campaign_.pool().records) ids.push_back(r.id);
  Rng rng(hash_combine(config_.seed, static_cast<std::uint64_t>(campaign_.round() + 1)));
  rng.shuffle(ids.begin(), ids.end());
  return ids;
}

std::string AnnotationService::image_token(std::uint64_t session_key, std::size_t task, int slot,
                                           const std::string& path) {
  const std::string token = hex64(hash_combine(session_key, task * 4 + static_cast<std::size_t>(slot)));
  tokens_[token] = path;
  return token;
}

ApiResponse AnnotationService::create_session(std::string_view kind, std::string worker_id) {
  std::lock_guard lock(mutex_);
  if (kind != "2afc" && kind != "jnd") return error_response(400, "kind must be 2afc or jnd");
  if (campaign_.finished()) return error_response(409, "campaign finished");
  const std::uint64_t key = hash_combine(hash_combine(config_.seed, 0x5e55), ++session_counter_);
  if (worker_id.empty()) worker_id = "w" + std::to_string(session_counter_);
  Session s;
  s.id = hex64(key);
  s.worker_id = worker_id;
  s.kind = std::string(kind);
  s.round = campaign_.round() + 1;
  ApiResponse r = kind == "2afc" ? create_2afc(s, key) : create_jnd(s, key);
  if (r.status == 200) sessions_.emplace(s.id, std::move(s));
  return r;
}

ApiResponse AnnotationService::create_2afc(Session& s, std::uint64_t key) {
  auto& seen = seen_2afc_[s.worker_id];
  std::vector<std::string> real, practice;
  for (const auto& id : round_order()) {
    if (assigned_this_round_.contains(id) || seen.contains(id)) continue;
    if (static_cast<int>(real.size()) < config_.real_tasks) real.push_back(id);
    else if (static_cast<int>(practice.size()) < config_.practice_tasks) practice.push_back(id);
    else break;
  }
  if (real.empty()) return error_response(409, "pool exhausted for this round");
  // With a short pool, practice items come from triplets this worker will not
  // see as real tasks, so they may be missing entirely.
  Rng rng(key);
  std::vector<std::string> all_ids;
  for (const auto& [id, rec] : records_) all_ids.push_back(id);

  std::vector<Task> main;
  for (const auto& id : real) {
    Task t;
    t.triplet_id = id;
    t.swapped = rng.bernoulli(0.5);
    main.push_back(t);
  }
  for (int i = 0; i < config_.sentinels; ++i) {
    Task t;
    t.sentinel = true;
    t.triplet_id = all_ids[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(all_ids.size()) - 1))];
    t.duplicate_position = static_cast<int>(rng.uniform_int(0, 1));
    const std::string& cat = records_.at(t.triplet_id).category;
    std::string distractor;
    for (int tries = 0; tries < 64 && distractor.empty(); ++tries) {
      const auto& cand = all_ids[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(all_ids.size()) - 1))];
      if (cand != t.triplet_id && records_.at(cand).category != cat) distractor = cand;
    }
    if (distractor.empty()) {
      for (const auto& cand : all_ids) {
        if (cand != t.triplet_id) {
          distractor = cand;
          break;
        }
      }
    }
    if (distractor.empty()) return error_response(409, "pool too small for sentinels");
    t.distractor_id = distractor;
    main.push_back(t);
  }
  rng.shuffle(main.begin(), main.end());
  for (const auto& id : practice) {
    Task t;
    t.practice = true;
    t.triplet_id = id;
    t.swapped = rng.bernoulli(0.5);
    s.tasks.push_back(t);
  }
  s.tasks.insert(s.tasks.end(), main.begin(), main.end());

  nlohmann::json tasks = nlohmann::json::array();
  for (std::size_t i = 0; i < s.tasks.size(); ++i) {
    const Task& t = s.tasks[i];
    const TripletRecord& rec = records_.at(t.triplet_id);
    std::string ref, a, b;
    if (t.sentinel) {
      const std::string& other = records_.at(t.distractor_id).ref_path;
      ref = rec.ref_path;
      a = t.duplicate_position == 0 ? rec.ref_path : other;
      b = t.duplicate_position == 0 ? other : rec.ref_path;
    } else {
      ref = rec.ref_path;
      a = t.swapped ? rec.b_path : rec.a_path;
      b = t.swapped ? rec.a_path : rec.b_path;
    }
    nlohmann::json task = {{"index", i},
                           {"kind", "2afc"},
                           {"practice", t.practice},
                           {"reference", "/api/image/" + image_token(key, i, 0, ref)},
                           {"a", "/api/image/" + image_token(key, i, 1, a)},
                           {"b", "/api/image/" + image_token(key, i, 2, b)}};
    if (t.practice) {
      const std::optional<int> truth = rec.label ? rec.label : rec.oracle_y;
      if (truth) task["expected"] = ((*truth == 1) != t.swapped) ? "B" : "A";
    }
    tasks.push_back(std::move(task));
  }
  for (const auto& id : real) {
    assigned_this_round_.insert(id);
    seen.insert(id);
  }
  for (const auto& id : practice) seen.insert(id);
  return {200,
          {{"session_id", s.id}, {"worker_id", s.worker_id}, {"kind", "2afc"}, {"round", s.round}, {"tasks", tasks}}};
}

ApiResponse AnnotationService::create_jnd(Session& s, std::uint64_t key) {
  const JndCounts counts = jnd_counts(config_.jnd_profile);
  const int needed = counts.distorted + counts.identical;
  auto& seen = seen_jnd_[s.worker_id];
  Rng rng(key);
  std::vector<std::string> available;
  for (const auto& r : campaign_.pool().records) {
    if (!seen.contains(r.id)) available.push_back(r.id);
  }
  if (static_cast<int>(available.size()) < needed) return error_response(409, "pool exhausted for JND");
  rng.shuffle(available.begin(), available.end());
  available.resize(static_cast<std::size_t>(needed));

  struct Pair {
    std::string triplet;
    int which;
  };
  std::vector<Pair> pairs;
  for (int i = 0; i < needed; ++i) {
    const int which = i < counts.distorted ? static_cast<int>(rng.uniform_int(0, 1)) : -1;
    pairs.push_back({available[static_cast<std::size_t>(i)], which});
  }
  rng.shuffle(pairs.begin(), pairs.end());

  const auto second = [&](const Pair& p) -> const std::string& {
    const TripletRecord& rec = records_.at(p.triplet);
    return p.which < 0 ? rec.ref_path : (p.which == 0 ? rec.a_path : rec.b_path);
  };
  nlohmann::json tasks = nlohmann::json::array();
  for (std::size_t i = 0; i + 1 < pairs.size(); i += 2) {
    Task t;
    t.jnd_pairs = {pairs[i].which, pairs[i + 1].which};
    t.jnd_triplets = {pairs[i].triplet, pairs[i + 1].triplet};
    const std::size_t index = s.tasks.size();
    // Interleaved order: x, v, x~, v~.
    const std::string paths[4] = {records_.at(pairs[i].triplet).ref_path, records_.at(pairs[i + 1].triplet).ref_path,
                                  second(pairs[i]), second(pairs[i + 1])};
    nlohmann::json images = nlohmann::json::array();
    for (int slot = 0; slot < 4; ++slot) images.push_back("/api/image/" + image_token(key, index, slot, paths[slot]));
    tasks.push_back({{"index", index},
                     {"kind", "jnd"},
                     {"images", images},
                     {"display_ms", config_.display_ms},
                     {"gap_ms", config_.gap_ms},
                     {"questions", 2}});
    s.tasks.push_back(std::move(t));
  }
  for (const auto& id : available) seen.insert(id);
  return {200,
          {{"session_id", s.id},
           {"worker_id", s.worker_id},
           {"kind", "jnd"},
           {"round", s.round},
           {"pair_questions", needed},
           {"display_ms", config_.display_ms},
           {"gap_ms", config_.gap_ms},
           {"tasks", tasks}}};
}

ApiResponse AnnotationService::post_judgment(const nlohmann::json& body) {
  std::lock_guard lock(mutex_);
  if (!body.is_object() || !body.contains("session_id") || !body["session_id"].is_string() ||
      !body.contains("task_index") || !body["task_index"].is_number_integer()) {
    return error_response(400, "body needs session_id and task_index");
  }
  auto it = sessions_.find(body["session_id"].get<std::string>());
  if (it == sessions_.end()) return error_response(404, "unknown session");
  Session& s = it->second;
  const auto index = body["task_index"].get<std::int64_t>();
  if (index < 0 || index >= static_cast<std::int64_t>(s.tasks.size())) {
    return error_response(400, "task_index out of range");
  }
  Task& t = s.tasks[static_cast<std::size_t>(index)];
  if (t.answered) return error_response(409, "task already answered");
  const double latency = body.contains("latency_ms") && body["latency_ms"].is_number()
                             ? body["latency_ms"].get<double>()
                             : 0.0;
  nlohmann::json event = {{"session", s.id}, {"task", index}, {"worker_id", s.worker_id},
                           {"round", s.round},  {"latency_ms", latency}, {"server_time_ms", now_ms()}};

  if (s.kind == "2afc") {
    const std::string choice = body.contains("choice") && body["choice"].is_string() ? body["choice"].get<std::string>() : "";
    if (choice != "A" && choice != "B") return error_response(400, "choice must be \"A\" or \"B\"");
    const int shown = choice == "B" ? 1 : 0;
    if (t.sentinel) {
      event["event"] = "sentinel";
      event["passed"] = shown == t.duplicate_position;
    } else if (!t.practice) {
      event["event"] = "judgment";
      event["triplet_id"] = t.triplet_id;
      event["choice"] = shown ^ (t.swapped ? 1 : 0);
    }
  } else {
    const auto& answers = body.contains("answers") ? body["answers"] : nlohmann::json();
    if (!answers.is_array() || answers.size() != t.jnd_pairs.size()) {
      return error_response(400, "answers must list one same/different answer per question");
    }
    nlohmann::json obs = nlohmann::json::array();
    for (std::size_t q = 0; q < t.jnd_pairs.size(); ++q) {
      const auto a = parse_answer(answers[q]);
      if (!a) return error_response(400, "answers must be \"same\" or \"different\"");
      obs.push_back({{"triplet_id", t.jnd_triplets[q]}, {"pair", t.jnd_pairs[q]}, {"answer", answer_name(*a)}});
    }
    event["event"] = "jnd";
    event["observations"] = obs;
    if (body.contains("timing_flag")) event["timing_flag"] = body["timing_flag"];
  }
  t.answered = true;
  ++s.completed;
  if (event.contains("event")) {
    apply_event(event);
    append_event(event);
  }
  return {200, {{"ok", true}, {"completed", s.completed}, {"total", s.tasks.size()}}};
}

void AnnotationService::apply_event(const nlohmann::json& e) {
  const std::string kind = e.at("event").get<std::string>();
  if (kind == "judgment") {
    Judgment j{e.at("worker_id").get<std::string>(), e.at("triplet_id").get<std::string>(),
               e.at("choice").get<int>(), e.at("round").get<int>()};
    assigned_this_round_.insert(j.triplet_id);
    seen_2afc_[j.worker_id].insert(j.triplet_id);
    round_judgments_.push_back(j);
    all_judgments_.push_back(std::move(j));
  } else if (kind == "sentinel") {
    SentinelResult r{e.at("worker_id").get<std::string>(), e.at("passed").get<bool>(), e.at("round").get<int>()};
    round_sentinels_.push_back(r);
    all_sentinels_.push_back(std::move(r));
  } else if (kind == "jnd") {
    for (const auto& o : e.at("observations")) {
      jnd_.push_back({e.at("worker_id").get<std::string>(), o.at("triplet_id").get<std::string>(),
                      o.at("pair").get<int>(), *parse_answer(o.at("answer")), e.at("round").get<int>()});
      seen_jnd_[e.at("worker_id").get<std::string>()].insert(o.at("triplet_id").get<std::string>());
    }
  } else if (kind == "advance") {
    campaign_.advance({round_judgments_, round_sentinels_});
    round_judgments_.clear();
    round_sentinels_.clear();
    assigned_this_round_.clear();
  } else {
    throw ValidationError("unknown event '" + kind + "' in judgment log");
  }
}

void AnnotationService::append_event(const nlohmann::json& event) {
  if (!log_.is_open()) return;
  log_ << event.dump() << "\n";
  log_.flush();
  if (!log_) throw IoError("failed appending to judgment log " + log_path_.string());
}

void AnnotationService::replay() {
  std::ifstream in(log_path_);
  if (!in) throw IoError("cannot read judgment log " + log_path_.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      apply_event(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("judgment log line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

ApiResponse AnnotationService::advance_round() {
  std::lock_guard lock(mutex_);
  if (campaign_.finished()) return error_response(409, "campaign already ran all rounds");
  const int current = campaign_.round() + 1;
  int open = 0;
  for (const auto& [id, s] : sessions_) open += s.round == current && s.open() ? 1 : 0;
  if (open > 0) return {409, {{"error", "sessions still open"}, {"open_sessions", open}}};
  const nlohmann::json event = {{"event", "advance"}, {"round", current}, {"server_time_ms", now_ms()}};
  apply_event(event);
  append_event(event);
  return {200, state_json()};
}

nlohmann::json AnnotationService::state_json() const {
  nlohmann::json counts = nlohmann::json::array();
  for (const auto& c : campaign_.history()) counts.push_back(c);
  return {{"round", campaign_.round() + 1},
          {"rounds_completed", campaign_.round()},
          {"max_rounds", campaign_.max_rounds()},
          {"finished", campaign_.finished()},
          {"pool_size", campaign_.pool().size()},
          {"counts", counts}};
}

ApiResponse AnnotationService::state() const {
  std::lock_guard lock(mutex_);
  return {200, state_json()};
}

std::string AnnotationService::export_snapshot() const {
  std::lock_guard lock(mutex_);
  nlohmann::json counts = nlohmann::json::array();
  for (const auto& c : campaign_.history()) counts.push_back(c);
  std::ostringstream out;
  out << nlohmann::json{{"psim_dataset_version", kDatasetVersion}, {"round_counts", counts}}.dump() << "\n";
  for (const auto& r : campaign_.result().dataset.records) {
    if (r.label) out << nlohmann::json(r).dump() << "\n";
  }
  return out.str();
}

std::optional<std::string> AnnotationService::image_path(std::string_view token) const {
  std::lock_guard lock(mutex_);
  auto it = tokens_.find(std::string(token));
  if (it == tokens_.end()) return std::nullopt;
  return it->second;
}

std::vector<JndRecord> AnnotationService::jnd_records() const {
  std::lock_guard lock(mutex_);
  std::set<std::string> failed = campaign_.excluded_workers();
  for (const auto& s : all_sentinels_) {
    if (!s.passed) failed.insert(s.worker_id);
  }
  std::map<std::string, std::array<std::vector<JndAnswer>, 2>> by_triplet;
  for (const auto& o : jnd_) {
    if (o.pair < 0 || failed.contains(o.worker_id)) continue;
    by_triplet[o.triplet_id][static_cast<std::size_t>(o.pair)].push_back(o.answer);
  }
  std::vector<JndRecord> out;
  for (auto& [id, answers] : by_triplet) {
    if (answers[0].size() < kJndTrials || answers[1].size() < kJndTrials) continue;
    JndRecord r;
    r.triplet_id = id;
    r.pair_a.assign(answers[0].begin(), answers[0].begin() + kJndTrials);
    r.pair_b.assign(answers[1].begin(), answers[1].begin() + kJndTrials);
    out.push_back(label_jnd(r));
  }
  return out;
}

JudgmentLog AnnotationService::judgments() const {
  std::lock_guard lock(mutex_);
  return all_judgments_;
}

std::vector<SentinelResult> AnnotationService::sentinel_results() const {
  std::lock_guard lock(mutex_);
  return all_sentinels_;
}

}  // namespace psim
