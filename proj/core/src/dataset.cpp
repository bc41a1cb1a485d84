#include "psim/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "psim/error.hpp"
#include "psim/random.hpp"

namespace psim {

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_string(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ValidationError("unknown split '" + std::string(name) + "'");
}

void TripletRecord::validate() const {
  if (id.empty()) throw ValidationError("triplet record without id");
  for (std::size_t i = 0; i < votes.size(); ++i) {
    if (votes[i].choice != 0 && votes[i].choice != 1) {
      throw ValidationError("triplet " + id + ": vote choice must be 0 or 1");
    }
    if (i > 0 && votes[i].round <= votes[i - 1].round) {
      throw ValidationError("triplet " + id + ": vote rounds must strictly increase");
    }
  }
  if (label) {
    if (*label != 0 && *label != 1) throw ValidationError("triplet " + id + ": label must be 0 or 1");
    for (const auto& v : votes) {
      if (v.choice != *label) throw ValidationError("triplet " + id + ": label on non-unanimous votes");
    }
  }
  if (oracle_y && *oracle_y != 0 && *oracle_y != 1) {
    throw ValidationError("triplet " + id + ": oracle_y must be 0 or 1");
  }
}

const TripletRecord* Dataset::find(std::string_view id) const {
  for (const auto& r : records) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

void to_json(nlohmann::json& j, const TripletRecord& r) {
  j = nlohmann::json::object();
  j["id"] = r.id;
  j["ref_path"] = r.ref_path;
  j["a_path"] = r.a_path;
  j["b_path"] = r.b_path;
  j["category"] = r.category;
  auto votes = nlohmann::json::array();
  for (const auto& v : r.votes) {
    votes.push_back({{"worker_id", v.worker_id}, {"choice", v.choice}, {"round", v.round}});
  }
  j["votes"] = votes;
  if (r.label) j["label"] = *r.label;
  if (r.oracle_y) j["oracle_y"] = *r.oracle_y;
  if (r.split) j["split"] = to_string(*r.split);
  if (r.mask_paths) j["mask_paths"] = *r.mask_paths;
  if (r.category_area) j["category_area"] = *r.category_area;
  if (r.spec) j["spec"] = *r.spec;
}

void from_json(const nlohmann::json& j, TripletRecord& r) {
  r = TripletRecord{};
  r.id = j.at("id").get<std::string>();
  r.ref_path = j.value("ref_path", std::string());
  r.a_path = j.value("a_path", std::string());
  r.b_path = j.value("b_path", std::string());
  r.category = j.value("category", std::string());
  if (j.contains("votes")) {
    for (const auto& v : j.at("votes")) {
      r.votes.push_back({v.at("worker_id").get<std::string>(), v.at("choice").get<int>(),
                         v.at("round").get<int>()});
    }
  }
  if (j.contains("label") && !j.at("label").is_null()) r.label = j.at("label").get<int>();
  if (j.contains("oracle_y") && !j.at("oracle_y").is_null()) r.oracle_y = j.at("oracle_y").get<int>();
  if (j.contains("split") && !j.at("split").is_null()) {
    r.split = split_from_string(j.at("split").get<std::string>());
  }
  if (j.contains("mask_paths")) r.mask_paths = j.at("mask_paths").get<std::array<std::string, 3>>();
  if (j.contains("category_area")) {
    r.category_area = j.at("category_area").get<std::array<std::array<double, kShapeKindCount>, 3>>();
  }
  if (j.contains("spec")) r.spec = j.at("spec").get<TripletSpec>();
  r.validate();
}

void write_dataset(std::ostream& out, const Dataset& dataset) {
  out << nlohmann::json{{"psim_dataset_version", kDatasetVersion}}.dump() << "\n";
  for (const auto& r : dataset.records) out << nlohmann::json(r).dump() << "\n";
  if (!out) throw IoError("dataset write failed");
}

Dataset read_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("dataset file is empty (missing header)");
  try {
    const auto header = nlohmann::json::parse(line);
    if (!header.is_object() || header.value("psim_dataset_version", 0) != kDatasetVersion) {
      throw ValidationError("unsupported dataset header: " + line);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad dataset header: ") + e.what());
  }
  Dataset ds;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      ds.records.push_back(nlohmann::json::parse(line).get<TripletRecord>());
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("dataset line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return ds;
}

void write_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_dataset(out, dataset);
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_dataset(in);
}

void to_json(nlohmann::json& j, const Judgment& v) {
  j = {{"worker_id", v.worker_id}, {"triplet_id", v.triplet_id}, {"choice", v.choice}, {"round", v.round}};
}

void from_json(const nlohmann::json& j, Judgment& v) {
  v.worker_id = j.at("worker_id").get<std::string>();
  v.triplet_id = j.at("triplet_id").get<std::string>();
  v.choice = j.at("choice").get<int>();
  v.round = j.value("round", 0);
}

void to_json(nlohmann::json& j, const SentinelResult& v) {
  j = {{"worker_id", v.worker_id}, {"passed", v.passed}, {"round", v.round}};
}

void from_json(const nlohmann::json& j, SentinelResult& v) {
  v.worker_id = j.at("worker_id").get<std::string>();
  v.passed = j.at("passed").get<bool>();
  v.round = j.value("round", 0);
}

void to_json(nlohmann::json& j, const RoundCounts& c) {
  j = {{"round", c.round},         {"input", c.input},
       {"unanimous", c.unanimous}, {"sentinel_carryover", c.sentinel_carryover},
       {"eliminated", c.eliminated}, {"kept", c.kept}};
}

ExclusionResult exclude_workers(const JudgmentLog& log, const std::vector<SentinelResult>& sentinels) {
  std::map<std::string, WorkerRecord> workers;
  for (const auto& s : sentinels) {
    auto& w = workers[s.worker_id];
    w.worker_id = s.worker_id;
    w.sentinel_results.push_back(s.passed);
    if (!s.passed) w.excluded = true;
  }
  for (const auto& j : log) {
    auto& w = workers[j.worker_id];
    w.worker_id = j.worker_id;
  }
  ExclusionResult out;
  for (const auto& j : log) {
    (workers[j.worker_id].excluded ? out.discarded : out.retained).push_back(j);
  }
  std::size_t excluded = 0;
  for (auto& [id, w] : workers) {
    excluded += w.excluded ? 1 : 0;
    out.workers.push_back(std::move(w));
  }
  out.excluded_fraction = workers.empty() ? 0.0 : static_cast<double>(excluded) / workers.size();
  return out;
}

RoundResult run_filter_round(const Dataset& pool, const JudgmentLog& new_judgments, int round) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < pool.records.size(); ++i) index.emplace(pool.records[i].id, i);

  std::vector<const Judgment*> incoming(pool.records.size(), nullptr);
  std::vector<std::string> unknown;
  for (const auto& j : new_judgments) {
    const auto it = index.find(j.triplet_id);
    if (it == index.end()) {
      unknown.push_back(j.triplet_id);
      continue;
    }
    if (incoming[it->second]) {
      throw ValidationError("triplet " + j.triplet_id + " received more than one judgment in round " +
                            std::to_string(round));
    }
    if (j.choice != 0 && j.choice != 1) throw ValidationError("judgment choice must be 0 or 1");
    incoming[it->second] = &j;
  }
  if (!unknown.empty()) {
    std::string ids;
    for (const auto& id : unknown) ids += (ids.empty() ? "" : ", ") + id;
    throw ValidationError("judgments reference unknown triplets: " + ids);
  }

  RoundResult out;
  out.counts.round = round;
  out.counts.input = static_cast<int>(pool.records.size());
  for (std::size_t i = 0; i < pool.records.size(); ++i) {
    const TripletRecord& r = pool.records[i];
    if (!incoming[i]) {
      ++out.counts.sentinel_carryover;
      out.pool.records.push_back(r);
      continue;
    }
    const int choice = incoming[i]->choice;
    const bool agrees = std::all_of(r.votes.begin(), r.votes.end(),
                                    [&](const RecordVote& v) { return v.choice == choice; });
    if (!agrees) {
      ++out.counts.eliminated;
      continue;
    }
    TripletRecord next = r;
    next.votes.push_back({incoming[i]->worker_id, choice, round});
    next.validate();
    out.pool.records.push_back(std::move(next));
    ++out.counts.unanimous;
  }
  out.counts.kept = out.counts.unanimous + out.counts.sentinel_carryover;
  return out;
}

void assign_labels(Dataset& dataset) {
  for (auto& r : dataset.records) {
    r.label.reset();
    if (r.votes.empty()) continue;
    const int c = r.votes.front().choice;
    if (std::all_of(r.votes.begin(), r.votes.end(), [&](const RecordVote& v) { return v.choice == c; })) {
      r.label = c;
    }
  }
}

FilterCampaign::FilterCampaign(Dataset pool, int max_rounds)
    : pool_(std::move(pool)), max_rounds_(max_rounds) {
  if (max_rounds < 1) throw ValidationError("campaign needs at least one round");
}

RoundCounts FilterCampaign::advance(const RoundInput& input) {
  if (finished()) {
    throw ValidationError("campaign already ran its " + std::to_string(max_rounds_) + " rounds");
  }
  for (const auto& s : input.sentinels) {
    if (!s.passed) excluded_.insert(s.worker_id);
  }
  JudgmentLog retained;
  for (const auto& j : input.judgments) {
    if (!excluded_.contains(j.worker_id)) retained.push_back(j);
  }
  RoundResult rr = run_filter_round(pool_, retained, round_ + 1);
  pool_ = std::move(rr.pool);
  ++round_;
  history_.push_back(rr.counts);
  std::vector<std::string> ids;
  for (const auto& r : pool_.records) ids.push_back(r.id);
  survivors_.push_back(std::move(ids));
  return rr.counts;
}

CampaignResult FilterCampaign::result() const {
  CampaignResult out;
  out.dataset = pool_;
  assign_labels(out.dataset);
  out.rounds = history_;
  out.survivors = survivors_;
  return out;
}

CampaignResult run_filter_campaign(const Dataset& pool, const std::vector<RoundInput>& stream,
                                   int rounds) {
  if (static_cast<int>(stream.size()) < rounds) {
    throw ValidationError("judgment stream has " + std::to_string(stream.size()) +
                          " rounds, campaign needs " + std::to_string(rounds));
  }
  FilterCampaign campaign(pool, rounds);
  for (int r = 0; r < rounds; ++r) campaign.advance(stream[r]);
  return campaign.result();
}

namespace {

bool majority_same(const std::vector<JndAnswer>& answers, const std::string& id, char pair) {
  if (answers.size() != kJndTrials) {
    throw ValidationError("JND record " + id + ": pair " + pair + " has " +
                          std::to_string(answers.size()) + " judgments, expected 3");
  }
  const auto same = std::count(answers.begin(), answers.end(), JndAnswer::same);
  return same * 2 > kJndTrials;
}

}  // namespace

JndRecord label_jnd(const JndRecord& record) {
  JndRecord out = record;
  const bool a = majority_same(record.pair_a, record.triplet_id, 'A');
  const bool b = majority_same(record.pair_b, record.triplet_id, 'B');
  out.pair_a_identical = a;
  out.pair_b_identical = b;
  if (a != b) {
    out.s = a ? 0 : 1;
    out.straddle_failed = false;
  } else {
    out.s.reset();
    out.straddle_failed = true;
  }
  return out;
}

namespace {

nlohmann::json answers_json(const std::vector<JndAnswer>& answers) {
  auto arr = nlohmann::json::array();
  for (auto a : answers) arr.push_back(a == JndAnswer::same ? "same" : "different");
  return arr;
}

std::vector<JndAnswer> answers_from(const nlohmann::json& j) {
  std::vector<JndAnswer> out;
  for (const auto& a : j) {
    const auto s = a.get<std::string>();
    if (s == "same") {
      out.push_back(JndAnswer::same);
    } else if (s == "different") {
      out.push_back(JndAnswer::different);
    } else {
      throw ValidationError("JND answer must be same or different, got '" + s + "'");
    }
  }
  return out;
}

}  // namespace

void to_json(nlohmann::json& j, const JndRecord& r) {
  j = {{"triplet_id", r.triplet_id},
       {"pair_a", answers_json(r.pair_a)},
       {"pair_b", answers_json(r.pair_b)},
       {"straddle_failed", r.straddle_failed}};
  if (r.pair_a_identical) j["pair_a_identical"] = *r.pair_a_identical;
  if (r.pair_b_identical) j["pair_b_identical"] = *r.pair_b_identical;
  if (r.s) j["s"] = *r.s;
}

void from_json(const nlohmann::json& j, JndRecord& r) {
  r = JndRecord{};
  r.triplet_id = j.at("triplet_id").get<std::string>();
  r.pair_a = answers_from(j.at("pair_a"));
  r.pair_b = answers_from(j.at("pair_b"));
  r.straddle_failed = j.value("straddle_failed", false);
  if (j.contains("pair_a_identical")) r.pair_a_identical = j.at("pair_a_identical").get<bool>();
  if (j.contains("pair_b_identical")) r.pair_b_identical = j.at("pair_b_identical").get<bool>();
  if (j.contains("s") && !j.at("s").is_null()) r.s = j.at("s").get<int>();
}

void make_splits(Dataset& dataset, const SplitFractions& f, std::uint64_t seed) {
  if (dataset.records.empty()) throw ValidationError("cannot split an empty dataset");
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw ValidationError("split fractions must be nonnegative and sum to 1");
  }
  const std::size_t n = dataset.records.size();
  const auto n_train = static_cast<std::size_t>(std::llround(f.train * static_cast<double>(n)));
  const auto n_val = std::min(n - std::min(n, n_train),
                              static_cast<std::size_t>(std::llround(f.val * static_cast<double>(n))));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  for (std::size_t i = 0; i < n; ++i) {
    const Split s = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
    dataset.records[order[i]].split = s;
  }
}

Dataset select_split(const Dataset& dataset, Split split) {
  Dataset out;
  for (const auto& r : dataset.records) {
    if (r.split && *r.split == split) out.records.push_back(r);
  }
  return out;
}

Dataset filter_min_votes(const Dataset& dataset, int threshold) {
  Dataset out;
  for (const auto& r : dataset.records) {
    if (static_cast<int>(r.votes.size()) >= threshold) out.records.push_back(r);
  }
  return out;
}

void write_split_manifest(std::ostream& out, const Dataset& dataset) {
  out << "id,split,label,votes\n";
  for (const auto& r : dataset.records) {
    out << r.id << ',' << (r.split ? std::string(to_string(*r.split)) : std::string()) << ','
        << (r.label ? std::to_string(*r.label) : std::string()) << ',' << r.votes.size() << '\n';
  }
}

}  // namespace psim
