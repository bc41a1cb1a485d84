#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <sstream>
#include <set>
#include <thread>

#include "oracles.hpp"
#include "psim/annotation_server.hpp"
#include "psim/annotation_service.hpp"
#include "psim/error.hpp"

// After Eigen: resolv.h, pulled in by httplib, defines _res.
#include <httplib.h>

using namespace psim;
using nlohmann::json;

namespace {

std::string token_of(const json& url) {
  const std::string s = url.get<std::string>();
  return s.substr(s.rfind('/') + 1);
}

struct TaskView {
  bool sentinel = false;
  int duplicate_shown = -1;  ///< sentinels: 0 = shown A repeats the reference
  std::string triplet_id;
  bool a_is_distortion_a = true;
};

/// Resolves a 2AFC task back to the pool via the image tokens, the way only
/// the server could.
TaskView inspect(const AnnotationService& svc, const Dataset& pool, const json& task) {
  const auto ref = *svc.image_path(token_of(task["reference"]));
  const auto a = *svc.image_path(token_of(task["a"]));
  const auto b = *svc.image_path(token_of(task["b"]));
  TaskView v;
  if (a == ref || b == ref) {
    v.sentinel = true;
    v.duplicate_shown = a == ref ? 0 : 1;
    return v;
  }
  for (const auto& r : pool.records) {
    if (r.ref_path == ref) {
      v.triplet_id = r.id;
      v.a_is_distortion_a = a == r.a_path;
    }
  }
  return v;
}

/// Answers every task of a 2AFC session: real tasks with votes[id], sentinels
/// correctly or not.
void answer_session(AnnotationService& svc, const Dataset& pool, const json& session,
                    const std::map<std::string, int>& votes, bool pass_sentinels) {
  for (const auto& task : session["tasks"]) {
    const TaskView v = inspect(svc, pool, task);
    std::string choice = "A";
    if (v.sentinel) {
      const int pick = pass_sentinels ? v.duplicate_shown : 1 - v.duplicate_shown;
      choice = pick == 0 ? "A" : "B";
    } else if (!task["practice"].get<bool>()) {
      const int want = votes.at(v.triplet_id);  // 0 = distortion A
      choice = (want == 0) == v.a_is_distortion_a ? "A" : "B";
    }
    const auto r = svc.post_judgment({{"session_id", session["session_id"]},
                                      {"task_index", task["index"]},
                                      {"choice", choice},
                                      {"latency_ms", 800}});
    REQUIRE(r.status == 200);
  }
}

CampaignConfig small_config() {
  CampaignConfig c;
  c.practice_tasks = 0;
  c.real_tasks = 3;
  c.sentinels = 1;
  c.max_rounds = 3;
  c.seed = 4;
  return c;
}

}  // namespace

TEST_SUITE("annotation") {

TEST_CASE("default 2AFC session layout") {
  const Dataset pool = test::oracle_pool(120, 1);
  AnnotationService svc(pool, CampaignConfig{});
  const auto r = svc.create_session("2afc", "alice");
  REQUIRE(r.status == 200);
  const auto& tasks = r.body["tasks"];
  CHECK(tasks.size() == 62);
  CHECK(r.body["worker_id"] == "alice");
  CHECK(r.body["round"] == 1);
  int practice = 0, sentinels = 0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    CHECK(tasks[i]["index"] == i);
    if (tasks[i]["practice"].get<bool>()) {
      ++practice;
      CHECK(i < 2);
      CHECK(tasks[i].contains("expected"));
    } else if (inspect(svc, pool, tasks[i]).sentinel) {
      ++sentinels;
    }
  }
  CHECK(practice == 2);
  CHECK(sentinels == 10);

  CampaignConfig none;
  none.sentinels = 0;
  AnnotationService plain(pool, none);
  const auto p = plain.create_session("2afc");
  for (const auto& t : p.body["tasks"]) CHECK_FALSE(inspect(plain, pool, t).sentinel);
}

TEST_CASE("sentinels are indistinguishable in the payload") {
  const Dataset pool = test::oracle_pool(120, 2);
  AnnotationService svc(pool, CampaignConfig{});
  const auto r = svc.create_session("2afc");
  std::set<std::string> keys_ref;
  std::set<std::string> urls;
  bool first = true;
  for (const auto& t : r.body["tasks"]) {
    for (const char* slot : {"reference", "a", "b"}) CHECK(urls.insert(t[slot].get<std::string>()).second);
    if (t["practice"].get<bool>()) continue;
    std::set<std::string> keys;
    for (const auto& [k, v] : t.items()) keys.insert(k);
    if (first) keys_ref = keys;
    first = false;
    CHECK(keys == keys_ref);
    CHECK(t["kind"] == "2afc");
  }
  CHECK(keys_ref == std::set<std::string>{"a", "b", "index", "kind", "practice", "reference"});
}

TEST_CASE("shown placement maps back to the stored choice") {
  const Dataset pool = test::oracle_pool(3, 3);
  CampaignConfig c = small_config();
  c.sentinels = 0;
  AnnotationService svc(pool, c);
  const auto s = svc.create_session("2afc", "w");
  answer_session(svc, pool, s.body, {{"t0000", 0}, {"t0001", 1}, {"t0002", 1}}, true);
  std::map<std::string, int> stored;
  for (const auto& j : svc.judgments()) stored[j.triplet_id] = j.choice;
  CHECK(stored == std::map<std::string, int>{{"t0000", 0}, {"t0001", 1}, {"t0002", 1}});
}

TEST_CASE("JND sessions follow the profile") {
  const Dataset pool = test::oracle_pool(80, 4);
  AnnotationService svc(pool, CampaignConfig{});
  const auto r = svc.create_session("jnd");
  REQUIRE(r.status == 200);
  CHECK(r.body["tasks"].size() == 36);
  CHECK(r.body["pair_questions"] == 72);
  CHECK(r.body["display_ms"] == 500);
  CHECK(r.body["gap_ms"] == 1000);
  for (const auto& t : r.body["tasks"]) {
    CHECK(t["images"].size() == 4);
    CHECK(t["questions"] == 2);
    CHECK(t["display_ms"] == 500);
  }
  CampaignConfig sm;
  sm.jnd_profile = JndProfile::sm;
  AnnotationService small(pool, sm);
  const auto s = small.create_session("jnd");
  CHECK(s.body["tasks"].size() == 18);
  CHECK(s.body["pair_questions"] == 36);
  CHECK(jnd_counts(JndProfile::main).distorted == 48);
  CHECK(jnd_counts(JndProfile::main).identical == 24);

  AnnotationService tiny(test::oracle_pool(40, 5), CampaignConfig{});
  CHECK(tiny.create_session("jnd").status == 409);
}

TEST_CASE("JND answers become labeled records") {
  const Dataset pool = test::oracle_pool(36, 6);
  CampaignConfig c;
  c.jnd_profile = JndProfile::sm;
  AnnotationService svc(pool, c);
  for (int w = 0; w < 12; ++w) {
    const auto s = svc.create_session("jnd", "j" + std::to_string(w));
    REQUIRE(s.status == 200);
    for (const auto& t : s.body["tasks"]) {
      json answers = json::array();
      for (int q = 0; q < 2; ++q) {
        const auto x = *svc.image_path(token_of(t["images"][q]));
        const auto y = *svc.image_path(token_of(t["images"][q + 2]));
        // Distortion A is always seen as identical to the reference, B never.
        const bool b_pair = y.ends_with("_b.png");
        answers.push_back(x == y || !b_pair ? "same" : "different");
      }
      const auto r = svc.post_judgment({{"session_id", s.body["session_id"]}, {"task_index", t["index"]}, {"answers", answers}});
      REQUIRE(r.status == 200);
    }
  }
  const auto records = svc.jnd_records();
  CHECK(records.size() > 0);
  for (const auto& r : records) {
    CHECK(r.s == 0);
    CHECK(r.pair_a.size() == 3);
  }

  // A worker never sees the same triplet twice.
  CHECK(svc.create_session("jnd", "j0").status == 409);
  CHECK(svc.create_session("jnd", "fresh").status == 200);
}

TEST_CASE("error statuses") {
  const Dataset pool = test::oracle_pool(60, 7);
  AnnotationService svc(pool, CampaignConfig{});
  CHECK(svc.create_session("rank").status == 400);
  CHECK(svc.post_judgment({{"session_id", "nope"}, {"task_index", 0}, {"choice", "A"}}).status == 404);
  CHECK(svc.post_judgment({{"task_index", 0}}).status == 400);
  const auto s = svc.create_session("2afc");
  const json sid = s.body["session_id"];
  CHECK(svc.post_judgment({{"session_id", sid}, {"task_index", 99}, {"choice", "A"}}).status == 400);
  CHECK(svc.post_judgment({{"session_id", sid}, {"task_index", 0}, {"choice", "C"}}).status == 400);
  const auto ok = svc.post_judgment({{"session_id", sid}, {"task_index", 3}, {"choice", "B"}});
  CHECK(ok.status == 200);
  CHECK(ok.body == json{{"ok", true}, {"completed", 1}, {"total", 62}});
  CHECK(svc.post_judgment({{"session_id", sid}, {"task_index", 3}, {"choice", "A"}}).status == 409);
  CHECK_FALSE(svc.image_path("ffff").has_value());

  const auto adv = svc.advance_round();
  CHECK(adv.status == 409);
  CHECK(adv.body["open_sessions"] == 1);

  CampaignConfig bad;
  bad.real_tasks = 0;
  CHECK_THROWS_AS(AnnotationService(pool, bad), ValidationError);
}

TEST_CASE("scripted rounds reproduce the filter counts") {
  const Dataset pool = test::oracle_pool(3, 8);
  AnnotationService svc(pool, small_config());

  auto s1 = svc.create_session("2afc", "w1");
  answer_session(svc, pool, s1.body, {{"t0000", 0}, {"t0001", 1}, {"t0002", 1}}, true);
  REQUIRE(svc.advance_round().status == 200);

  auto s2 = svc.create_session("2afc", "w2");
  answer_session(svc, pool, s2.body, {{"t0000", 0}, {"t0001", 0}, {"t0002", 1}}, true);
  REQUIRE(svc.advance_round().status == 200);

  auto s3 = svc.create_session("2afc", "w3");
  CHECK(s3.body["tasks"].size() == 3);  // two survivors and one sentinel
  answer_session(svc, pool, s3.body, {{"t0000", 1}, {"t0002", 0}}, false);
  const auto last = svc.advance_round();
  REQUIRE(last.status == 200);

  const auto& counts = last.body["counts"];
  REQUIRE(counts.size() == 3);
  auto row = [&](int i) {
    const auto& c = counts[i];
    return std::vector<int>{c["round"], c["input"], c["unanimous"], c["sentinel_carryover"], c["eliminated"], c["kept"]};
  };
  CHECK(row(0) == std::vector<int>{1, 3, 3, 0, 0, 3});
  CHECK(row(1) == std::vector<int>{2, 3, 2, 0, 1, 2});
  CHECK(row(2) == std::vector<int>{3, 2, 0, 2, 0, 2});
  CHECK(last.body["finished"] == true);
  CHECK(svc.advance_round().status == 409);
  CHECK(svc.create_session("2afc").status == 409);

  std::istringstream lines(svc.export_snapshot());
  std::string header, l1, l2, extra;
  std::getline(lines, header);
  std::getline(lines, l1);
  std::getline(lines, l2);
  CHECK_FALSE(std::getline(lines, extra));
  CHECK(json::parse(header)["round_counts"].size() == 3);
  CHECK(json::parse(l1)["id"] == "t0000");
  CHECK(json::parse(l1)["label"] == 0);
  CHECK(json::parse(l2)["id"] == "t0002");
  CHECK(json::parse(l2)["label"] == 1);
}

TEST_CASE("export is deterministic and header-only when empty") {
  const Dataset pool = test::oracle_pool(10, 9);
  AnnotationService svc(pool, small_config());
  const std::string e = svc.export_snapshot();
  CHECK(std::count(e.begin(), e.end(), '\n') == 1);
  CHECK(json::parse(e.substr(0, e.find('\n')))["round_counts"].empty());
  CHECK(svc.export_snapshot() == e);
}

TEST_CASE("log replay restores the campaign") {
  const Dataset pool = test::oracle_pool(3, 10);
  const auto dir = test::scratch_dir("annotation-log");
  const auto log = dir / "events.jsonl";
  std::string exported;
  JudgmentLog judged;
  {
    AnnotationService svc(pool, small_config(), log);
    auto s = svc.create_session("2afc", "w1");
    answer_session(svc, pool, s.body, {{"t0000", 1}, {"t0001", 0}, {"t0002", 1}}, true);
    REQUIRE(svc.advance_round().status == 200);
    auto s2 = svc.create_session("2afc", "w2");
    answer_session(svc, pool, s2.body, {{"t0000", 1}, {"t0001", 1}, {"t0002", 1}}, true);
    exported = svc.export_snapshot();
    judged = svc.judgments();
  }
  AnnotationService back(pool, small_config(), log);
  CHECK(back.round() == 2);
  CHECK(back.judgments() == judged);
  CHECK(back.export_snapshot() == exported);
  CHECK(back.advance_round().status == 200);
  CHECK(back.state().body["counts"][1]["eliminated"] == 1);

  std::ofstream(dir / "bad.jsonl") << "{\"event\": \"teleport\"}\n";
  CHECK_THROWS_AS(AnnotationService(pool, small_config(), dir / "bad.jsonl"), ValidationError);
}

TEST_CASE("http endpoints") {
  const Dataset pool = test::oracle_pool(60, 11);
  const auto root = test::scratch_dir("annotation-http");
  std::filesystem::create_directories(root / "images");
  for (const auto& r : pool.records) {
    for (const auto& p : {r.ref_path, r.a_path, r.b_path}) std::ofstream(root / p) << "png:" << p;
  }
  AnnotationService svc(pool, CampaignConfig{});
  AnnotationServer server(svc, root);
  const int port = server.bind_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client cli("127.0.0.1", port);
  auto s = cli.Get("/api/session?kind=2afc&worker=web");
  REQUIRE(s);
  CHECK(s->status == 200);
  const json session = json::parse(s->body);
  CHECK(session["tasks"].size() == 62);

  const std::string url = session["tasks"][0]["reference"];
  auto img = cli.Get(url);
  REQUIRE(img);
  CHECK(img->status == 200);
  CHECK(img->body.starts_with("png:images/"));
  CHECK(cli.Get("/api/image/0123abcd")->status == 404);

  const json body = {{"session_id", session["session_id"]}, {"task_index", 2}, {"choice", "A"}, {"latency_ms", 10}};
  auto j = cli.Post("/api/judgment", body.dump(), "application/json");
  REQUIRE(j);
  CHECK(j->status == 200);
  CHECK(cli.Post("/api/judgment", "{not json", "application/json")->status == 400);
  CHECK(cli.Post("/api/round/advance", "", "application/json")->status == 409);
  CHECK(cli.Get("/api/session?kind=ranking")->status == 400);
  auto st = cli.Get("/api/state");
  REQUIRE(st);
  CHECK(json::parse(st->body)["round"] == 1);
  auto ex = cli.Get("/api/export");
  REQUIRE(ex);
  CHECK(ex->body == svc.export_snapshot());

  server.stop();
  t.join();
}

}  // TEST_SUITE
