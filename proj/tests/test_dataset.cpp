#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "psim/annotator.hpp"
#include "psim/dataset.hpp"
#include "psim/error.hpp"

using namespace psim;

namespace {

TripletRecord record(const std::string& id, std::vector<int> votes = {}) {
  TripletRecord r;
  r.id = id;
  r.ref_path = id + "_r.png";
  r.a_path = id + "_a.png";
  r.b_path = id + "_b.png";
  r.category = "fg-fg";
  int round = 1;
  for (int v : votes) r.votes.push_back({"w" + std::to_string(round), v, round}), ++round;
  return r;
}

std::vector<JndAnswer> answers(const std::string& pattern) {
  std::vector<JndAnswer> out;
  for (char c : pattern) out.push_back(c == 's' ? JndAnswer::same : JndAnswer::different);
  return out;
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("record invariants") {
  auto r = record("t", {0, 0});
  r.label = 0;
  CHECK_NOTHROW(r.validate());
  r.label = 1;
  CHECK_THROWS_AS(r.validate(), ValidationError);
  r = record("t", {0, 0});
  r.votes[1].round = 1;
  CHECK_THROWS_AS(r.validate(), ValidationError);
}

TEST_CASE("dataset json-lines round trip") {
  Dataset d;
  d.records.push_back(record("a", {1, 1}));
  d.records[0].label = 1;
  d.records[0].oracle_y = 1;
  d.records[0].split = Split::val;
  d.records[0].mask_paths = std::array<std::string, 3>{"m0", "m1", "m2"};
  d.records[0].category_area = std::array<std::array<double, 4>, 3>{};
  d.records[0].category_area->at(1)[2] = 0.25;
  d.records.push_back(record("b"));
  std::stringstream ss;
  write_dataset(ss, d);
  std::string first;
  std::getline(std::stringstream(ss.str()), first);
  CHECK(nlohmann::json::parse(first).at("psim_dataset_version") == 1);
  CHECK(read_dataset(ss) == d);

  std::stringstream bad("{\"psim_dataset_version\":9}\n");
  CHECK_THROWS_AS(read_dataset(bad), ValidationError);
}

TEST_CASE("filter round: unanimity, elimination and errors") {
  Dataset pool;
  pool.records = {record("keep", {0, 0}), record("drop", {0}), record("idle", {1})};
  const JudgmentLog log = {{"w9", "keep", 0, 3}, {"w9", "drop", 1, 3}};
  const auto rr = run_filter_round(pool, log, 3);
  REQUIRE(rr.pool.size() == 2);
  CHECK(rr.pool.records[0].id == "keep");
  CHECK(rr.pool.records[0].votes.size() == 3);
  CHECK(rr.pool.records[1].id == "idle");
  CHECK(rr.counts == RoundCounts{3, 3, 1, 1, 1, 2});

  CHECK_THROWS_WITH_AS(run_filter_round(pool, {{"w", "ghost", 0, 3}, {"w", "phantom", 0, 3}}, 3),
                       doctest::Contains("ghost, phantom"), ValidationError);
  CHECK_THROWS_AS(run_filter_round(pool, {{"w", "keep", 0, 3}, {"v", "keep", 0, 3}}, 3), ValidationError);
}

TEST_CASE("hand-simulated three-round campaign with a discarded worker") {
  Dataset pool;
  pool.records = {record("t0"), record("t1"), record("t2")};
  std::vector<RoundInput> stream(3);
  stream[0].judgments = {{"w1", "t0", 0, 1}, {"w1", "t1", 1, 1}, {"w1", "t2", 1, 1}};
  stream[0].sentinels = {{"w1", true, 1}};
  stream[1].judgments = {{"w2", "t0", 0, 2}, {"w2", "t1", 0, 2}, {"w3", "t2", 0, 2}};
  stream[1].sentinels = {{"w2", true, 2}, {"w3", false, 2}};
  stream[2].judgments = {{"w4", "t0", 0, 3}, {"w4", "t2", 1, 3}};
  const auto result = run_filter_campaign(pool, stream, 3);
  REQUIRE(result.rounds.size() == 3);
  CHECK(result.rounds[0] == RoundCounts{1, 3, 3, 0, 0, 3});
  CHECK(result.rounds[1] == RoundCounts{2, 3, 1, 1, 1, 2});
  CHECK(result.rounds[2] == RoundCounts{3, 2, 2, 0, 0, 2});
  REQUIRE(result.dataset.size() == 2);
  CHECK(result.dataset.records[0].id == "t0");
  CHECK(result.dataset.records[0].label == 0);
  CHECK(result.dataset.records[0].votes.size() == 3);
  CHECK(result.dataset.records[1].id == "t2");
  CHECK(result.dataset.records[1].label == 1);
  CHECK(result.dataset.records[1].votes.size() == 2);
  CHECK(result.survivors[1] == std::vector<std::string>{"t0", "t2"});
}

TEST_CASE("exclusion carries into later rounds") {
  Dataset pool;
  pool.records = {record("t0"), record("t1")};
  FilterCampaign c(pool, 2);
  c.advance({{{"bad", "t0", 0, 1}, {"ok", "t1", 1, 1}}, {{"bad", false, 1}}});
  CHECK(c.history()[0].sentinel_carryover == 1);
  // No sentinel from "bad" this round, yet its vote is still dropped.
  c.advance({{{"bad", "t0", 1, 2}, {"ok", "t1", 1, 2}}, {}});
  CHECK(c.history()[1].sentinel_carryover == 1);
  CHECK(c.pool().records[0].votes.empty());
  CHECK(c.excluded_workers() == std::set<std::string>{"bad"});
  CHECK_THROWS_AS(c.advance({}), ValidationError);
}

TEST_CASE("exclude_workers") {
  const JudgmentLog log = {{"a", "t0", 0, 1}, {"b", "t1", 1, 1}, {"a", "t2", 1, 1}, {"c", "t3", 0, 1}};
  auto r = exclude_workers(log, {{"a", true, 1}, {"b", true, 1}});
  CHECK(r.retained == log);
  CHECK(r.excluded_fraction == 0.0);
  r = exclude_workers(log, {{"a", false, 1}, {"b", false, 1}, {"c", false, 1}});
  CHECK(r.retained.empty());
  CHECK(r.excluded_fraction == 1.0);
  r = exclude_workers(log, {{"a", true, 1}, {"a", false, 1}, {"b", true, 1}});
  CHECK(r.retained == JudgmentLog{{"b", "t1", 1, 1}, {"c", "t3", 0, 1}});
  CHECK(r.discarded.size() == 2);
  CHECK(r.excluded_fraction == doctest::Approx(1.0 / 3.0));
  REQUIRE(r.workers.size() == 3);
  CHECK(r.workers[0].worker_id == "a");
  CHECK(r.workers[0].excluded);
  CHECK(r.workers[0].sentinel_results == std::vector<bool>{true, false});
}

TEST_CASE("simulated annotator statistics") {
  std::vector<std::pair<std::string, int>> tasks;
  for (int i = 0; i < 10000; ++i) tasks.emplace_back("t" + std::to_string(i), i % 2);
  AnnotatorConfig c;
  c.seed = 3;
  auto out = simulate_annotator("w", tasks, 1, c);
  for (std::size_t i = 0; i < tasks.size(); ++i) CHECK(out.judgments[i].choice == tasks[i].second);
  c.flip_prob = 0.5;
  out = simulate_annotator("w", tasks, 1, c);
  int flips = 0;
  for (std::size_t i = 0; i < tasks.size(); ++i) flips += out.judgments[i].choice != tasks[i].second;
  CHECK(std::abs(flips / 10000.0 - 0.5) <= 0.02);
  c.flip_prob = 0.999;
  out = simulate_annotator("w", tasks, 1, c);
  flips = 0;
  for (std::size_t i = 0; i < tasks.size(); ++i) flips += out.judgments[i].choice != tasks[i].second;
  CHECK(flips >= 9950);
  c.flip_prob = 1.0;
  CHECK_THROWS_AS(simulate_annotator("w", tasks, 1, c), ValidationError);

  // Order of tasks does not matter.
  c.flip_prob = 0.3;
  auto reversed = tasks;
  std::reverse(reversed.begin(), reversed.end());
  const auto fwd = simulate_annotator("w", tasks, 2, c);
  const auto rev = simulate_annotator("w", reversed, 2, c);
  CHECK(fwd.judgments.front().choice == rev.judgments.back().choice);
}

TEST_CASE("noise-free campaign keeps everything") {
  CampaignSimConfig c;
  c.flip_prob = 0.0;
  c.failing_worker_fraction = 0.0;
  c.seed = 5;
  const auto r = simulate_campaign(test::oracle_pool(200, 1), c);
  CHECK(r.dataset.size() == 200);
  for (const auto& rec : r.dataset.records) {
    CHECK(rec.votes.size() == 10);
    CHECK(rec.label == rec.oracle_y);
  }
}

TEST_CASE("simulated campaign matches an independent re-simulation") {
  CampaignSimConfig c;
  c.seed = 17;
  const Dataset pool = test::oracle_pool(300, 2);
  const auto lib = simulate_campaign(pool, c);
  const auto ref = test::resimulate_campaign(pool, c);
  REQUIRE(lib.rounds.size() == ref.rounds.size());
  for (std::size_t k = 0; k < ref.rounds.size(); ++k) {
    CHECK(lib.rounds[k].input == ref.rounds[k].input);
    CHECK(lib.rounds[k].unanimous == ref.rounds[k].unanimous);
    CHECK(lib.rounds[k].sentinel_carryover == ref.rounds[k].carryover);
    CHECK(lib.rounds[k].eliminated == ref.rounds[k].eliminated);
    CHECK(lib.survivors[k] == ref.rounds[k].survivors);
    if (k > 0) {
      const std::set<std::string> prev(lib.survivors[k - 1].begin(), lib.survivors[k - 1].end());
      for (const auto& id : lib.survivors[k]) CHECK(prev.count(id) == 1);
    }
  }
  REQUIRE(lib.dataset.size() == ref.labels.size());
  for (const auto& rec : lib.dataset.records) {
    CHECK(rec.label == ref.labels.at(rec.id));
    CHECK(static_cast<int>(rec.votes.size()) == ref.vote_counts.at(rec.id));
    if (rec.label) {
      for (const auto& v : rec.votes) CHECK(v.choice == *rec.label);
    }
  }
}

TEST_CASE("jnd labeling") {
  JndRecord r{"t", answers("ssd"), answers("ddd")};
  auto l = label_jnd(r);
  CHECK(l.s == 0);
  CHECK(l.pair_a_identical == true);
  CHECK(l.pair_b_identical == false);
  CHECK_FALSE(l.straddle_failed);

  l = label_jnd({"t", answers("sss"), answers("dss")});
  CHECK_FALSE(l.s.has_value());
  CHECK(l.straddle_failed);
  l = label_jnd({"t", answers("ddd"), answers("dsd")});
  CHECK(l.straddle_failed);
  CHECK_THROWS_AS(label_jnd({"t", answers("ss"), answers("ddd")}), ValidationError);

  // Twenty scripted records: majority per pair written out by hand.
  const char* a[] = {"sss", "ssd", "sdd", "ddd", "dsd", "dss", "sds", "ddd", "sss", "dds",
                     "ssd", "ddd", "dsd", "sss", "dds", "sdd", "ssd", "dsd", "sds", "ddd"};
  const char* b[] = {"ddd", "dds", "sss", "ssd", "sss", "ddd", "ssd", "ddd", "ssd", "sds",
                     "dsd", "sds", "dss", "sdd", "ssd", "ddd", "dss", "dds", "ddd", "dss"};
  // 0 = A identical, 1 = B identical, -1 = straddle failure.
  const int expected[] = {0, 0, 1, 1, 1, 0, -1, -1, -1, 1, 0, 1, 1, 0, 1, -1, -1, -1, 0, 1};
  for (int i = 0; i < 20; ++i) {
    const auto rec = label_jnd({"t" + std::to_string(i), answers(a[i]), answers(b[i])});
    if (expected[i] < 0) {
      CHECK_MESSAGE(rec.straddle_failed, i);
    } else {
      CHECK_MESSAGE(rec.s == expected[i], i);
    }
  }
  nlohmann::json j = l;
  CHECK(j.get<JndRecord>() == l);
}

TEST_CASE("splits partition deterministically") {
  Dataset d = test::oracle_pool(10, 3);
  make_splits(d, {}, 9);
  CHECK(select_split(d, Split::train).size() == 8);
  CHECK(select_split(d, Split::val).size() == 1);
  CHECK(select_split(d, Split::test).size() == 1);
  Dataset again = test::oracle_pool(10, 3);
  make_splits(again, {}, 9);
  CHECK(again == d);

  Dataset big = test::oracle_pool(20019, 4);
  make_splits(big, {}, 1);
  const auto tr = select_split(big, Split::train).size();
  const auto va = select_split(big, Split::val).size();
  const auto te = select_split(big, Split::test).size();
  CHECK(tr + va + te == 20019);
  CHECK(std::abs(static_cast<double>(tr) - 0.8 * 20019) <= 1.0);
  CHECK(std::abs(static_cast<double>(va) - 0.1 * 20019) <= 1.0);
  CHECK(std::abs(static_cast<double>(te) - 0.1 * 20019) <= 1.0);

  Dataset empty;
  CHECK_THROWS_AS(make_splits(empty, {}, 1), ValidationError);
  CHECK_THROWS_AS(make_splits(d, {0.5, 0.5, 0.5}, 1), ValidationError);
}

TEST_CASE("vote threshold and split manifest") {
  Dataset d;
  d.records = {record("seven", {1, 1, 1, 1, 1, 1, 1}), record("five", {0, 0, 0, 0, 0}),
               record("six", {0, 0, 0, 0, 0, 0}), record("none")};
  const auto kept = filter_min_votes(d);
  REQUIRE(kept.size() == 2);
  CHECK(kept.records[0].id == "seven");
  CHECK(kept.records[1].id == "six");

  d.records[0].split = Split::train;
  d.records[0].label = 1;
  std::stringstream ss;
  write_split_manifest(ss, d);
  CHECK(ss.str().rfind("id,split,label,votes\nseven,train,1,7\nfive,,,5\n", 0) == 0);
}

}  // TEST_SUITE
