#include <doctest.h>
#include <httplib.h>

#include <chrono>
#include <future>
#include <thread>

#include "helpers.hpp"
#include "silverloop/active.hpp"
#include "silverloop/corpus.hpp"
#include "silverloop/eval.hpp"
#include "silverloop/rule_labeler.hpp"
#include "silverloop/service.hpp"
#include "silverloop/surrogate.hpp"

using namespace silverloop;

namespace {

// Data directory with a corpus, a student checkpoint, a small held-out set, a
// selection disjoint from it and an adjudication queue.
void seed_data_dir(const fs::path& dir) {
  auto cfg = GeneratorConfig::defaults();
  cfg.n_reports = 80;
  cfg.seed = 5;
  const auto g = generate(cfg);
  write_corpus(dir / data_files::kCorpus, g.sentences);
  const auto teacher = classify_corpus(g.sentences, CompiledRuleSet(load_rules(testing::source_path("rules/default.json"))), 1);

  ModelConfig mc;
  mc.hasher.n_buckets = 1u << 12;
  mc.embed_dim = 16;
  mc.hidden_dim = 16;
  const auto ckpt = initial_checkpoint(mc, 3);
  save_checkpoint(dir / "student.json", ckpt);

  const std::size_t half = g.sentences.size() / 2;
  const std::span<const SentenceRecord> first(g.sentences.data(), half);
  const std::span<const LabelRecord> first_labels(teacher.data(), half);
  const auto plan = build_heldout(first_labels, first, 1, 1);
  write_jsonl<HeldoutItem>(dir / data_files::kHeldout, plan.items);

  const auto taken = plan.keys();
  std::vector<SelectedItem> selection;
  for (std::size_t i = half; i < g.sentences.size() && selection.size() < 3; ++i) {
    const auto& s = g.sentences[i];
    if (taken.count(s.dedup_key)) continue;
    bool dup = false;
    for (const auto& x : selection) dup |= x.dedup_key == s.dedup_key;
    if (dup) continue;
    selection.push_back({s.dedup_key, s.report_id, s.sentence_index, s.text, {TaskId::edema, TaskId::no_finding}});
  }
  write_jsonl<SelectedItem>(dir / data_files::kSelection, selection);

  const auto student = predict_corpus(g.sentences, ckpt.model, 64).labels;
  const auto queue = discrepancy_sample(teacher, student, 2, 1, g.sentences);
  const auto items = queue_items_json(queue);
  write_jsonl<json>(dir / data_files::kAdjudicationQueue, std::vector<json>(items.begin(), items.end()));
  write_json(dir / data_files::kUnblinding, unblinding_json(queue));
}

struct Running {
  Service service;
  int port;
  std::thread thread;
  httplib::Client client;

  explicit Running(ServiceConfig config)
      : service(std::move(config)), port(service.bind("127.0.0.1", 0)), client("127.0.0.1", port) {
    thread = std::thread([this] { service.serve(); });
    client.set_read_timeout(60, 0);
  }
  ~Running() {
    service.stop();
    thread.join();
  }

  json get(const std::string& path, int expect) {
    auto res = client.Get(path);
    REQUIRE(res);
    CHECK_MESSAGE(res->status == expect, path << " -> " << res->status << " " << res->body);
    return res->body.empty() ? json() : json::parse(res->body);
  }
  json post(const std::string& path, const json& body, int expect) {
    auto res = client.Post(path, body.dump(), "application/json");
    REQUIRE(res);
    CHECK_MESSAGE(res->status == expect, path << " -> " << res->status << " " << res->body);
    return res->body.empty() ? json() : json::parse(res->body);
  }
};

ServiceConfig config_for(const fs::path& dir) {
  ServiceConfig c;
  c.data_dir = dir;
  c.checkpoint = dir / "student.json";
  c.rules = testing::source_path("rules/default.json");
  c.round.batch_size = 64;
  return c;
}

std::size_t count_lines(const fs::path& p) {
  if (!fs::exists(p)) return 0;
  std::size_t n = 0;
  for_each_jsonl(p, [&](const json&, std::size_t) { ++n; });
  return n;
}

// Answers every label item for `annotator` with its first choice.
std::size_t drain_labels(Running& r, const std::string& annotator) {
  std::size_t n = 0;
  for (;;) {
    auto res = r.client.Get("/api/v1/queue/next?annotator=" + annotator);
    REQUIRE(res);
    if (res->status == 204) return n;
    REQUIRE(res->status == 200);
    const auto item = json::parse(res->body);
    r.post("/api/v1/annotations",
           {{"item_id", item["item_id"]}, {"label", item["choices"][0]}, {"annotator", annotator}}, 200);
    ++n;
  }
}

}  // namespace

TEST_CASE("queue/next validates its parameters") {
  testing::TempDir dir;
  seed_data_dir(dir.path());
  Running r(config_for(dir.path()));
  CHECK(r.get("/api/v1/queue/next", 400)["error"]["kind"] == "validation");
  r.get("/api/v1/queue/next?annotator=a&mode=review", 400);
  r.get("/api/v1/queue/next?annotator=a&task=spleen", 400);
}

TEST_CASE("queue/next on an empty data dir is 204") {
  testing::TempDir dir;
  ServiceConfig c;
  c.data_dir = dir.path();
  Running r(c);
  auto res = r.client.Get("/api/v1/queue/next?annotator=a");
  REQUIRE(res);
  CHECK(res->status == 204);
  res = r.client.Get("/api/v1/queue/next?annotator=a&mode=adjudicate");
  REQUIRE(res);
  CHECK(res->status == 204);
  r.post("/api/v1/rounds", json::object(), 422);
}

TEST_CASE("label flow") {
  testing::TempDir dir;
  seed_data_dir(dir.path());
  Running r(config_for(dir.path()));

  const auto first = r.get("/api/v1/queue/next?annotator=ann1", 200);
  CHECK(first["mode"] == "label");
  CHECK(first.contains("text"));
  CHECK(r.get("/api/v1/queue/next?annotator=ann1", 200)["item_id"] == first["item_id"]);

  const auto stored =
      r.post("/api/v1/annotations", {{"item_id", first["item_id"]}, {"label", first["choices"][0]}, {"annotator", "ann1"}}, 200);
  CHECK(stored["stored"] == 1);
  CHECK(count_lines(dir / data_files::kAnnotations) == 1);
  CHECK(r.get("/api/v1/queue/next?annotator=ann1", 200)["item_id"] != first["item_id"]);
  // another annotator still sees the first item
  CHECK(r.get("/api/v1/queue/next?annotator=ann2", 200)["item_id"] == first["item_id"]);

  r.post("/api/v1/annotations", {{"item_id", first["item_id"]}, {"label", first["choices"][0]}, {"annotator", "ann1"}}, 409);
  r.post("/api/v1/annotations", {{"item_id", "nope"}, {"label", "positive"}, {"annotator", "ann1"}}, 404);
  r.post("/api/v1/annotations", {{"item_id", first["item_id"]}, {"label", "maybe"}, {"annotator", "ann3"}}, 422);
  r.post("/api/v1/annotations", {{"item_id", first["item_id"]}, {"annotator", "ann3"}}, 400);
  auto bad = r.client.Post("/api/v1/annotations", "{not json", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);

  const auto nf = r.get("/api/v1/queue/next?annotator=ann1&task=no_finding", 200);
  CHECK(nf["task"] == "no_finding");
  CHECK(nf["choices"] == json{"negative", "positive"});
  CHECK(r.post("/api/v1/annotations", {{"item_id", nf["item_id"]}, {"label", "uncertain"}, {"annotator", "ann1"}}, 422)
            ["error"]["kind"] == "invalid_label");
  CHECK(count_lines(dir / data_files::kAnnotations) == 1);
}

TEST_CASE("adjudication flow") {
  testing::TempDir dir;
  seed_data_dir(dir.path());
  Running r(config_for(dir.path()));
  const auto item = r.get("/api/v1/queue/next?annotator=adj&mode=adjudicate", 200);
  CHECK(item["mode"] == "adjudicate");
  CHECK(item["choices"] == json{"prefer_a", "prefer_b", "both_wrong", "unsure"});
  CHECK(!item.contains("report_id"));
  r.post("/api/v1/adjudications", {{"item_id", item["item_id"]}, {"verdict", "sideways"}, {"annotator", "adj"}}, 422);
  r.post("/api/v1/adjudications", {{"item_id", item["item_id"]}, {"verdict", "both_wrong"}, {"annotator", "adj"}}, 200);
  r.post("/api/v1/adjudications", {{"item_id", item["item_id"]}, {"verdict", "prefer_a"}, {"annotator", "adj"}}, 409);
  r.post("/api/v1/adjudications", {{"item_id", "x"}, {"verdict", "prefer_a"}, {"annotator", "adj"}}, 404);

  const auto stored = read_jsonl<AdjudicationRecord>(dir / data_files::kAdjudications);
  REQUIRE(stored.size() == 1);
  CHECK(stored[0].verdict == Verdict::both_wrong);
  CHECK(stored[0].blinding_id == item["item_id"].get<std::string>());
  CHECK(r.get("/api/v1/queue/next?annotator=adj&mode=adjudicate", 200)["item_id"] != item["item_id"]);
}

TEST_CASE("metrics") {
  testing::TempDir dir;
  seed_data_dir(dir.path());
  Running r(config_for(dir.path()));
  auto m = r.get("/api/v1/metrics", 200);
  CHECK(!m.contains("gold_accuracy"));
  CHECK(m.contains("parity"));
  CHECK(m["annotations"]["total"] == 0);
  const auto depth = m["queue_depths"]["label"]["total"].get<std::size_t>();
  CHECK(depth > 0);
  CHECK(m["round_running"] == false);

  const auto item = r.get("/api/v1/queue/next?annotator=a", 200);
  REQUIRE(item["item_id"].get<std::string>().rfind("h-", 0) == 0);
  r.post("/api/v1/annotations", {{"item_id", item["item_id"]}, {"label", item["choices"][0]}, {"annotator", "a"}}, 200);
  m = r.get("/api/v1/metrics", 200);
  CHECK(m["annotations"]["total"] == 1);
  CHECK(m["annotations"]["by_source"]["heldout"] == 1);
  CHECK(m["annotations"]["last_hour"] == 1);
  CHECK(m["queue_depths"]["label"]["total"] == depth - 1);
  CHECK(m.contains("gold_accuracy"));
  CHECK(m["gold_accuracy"].contains("teacher"));
  CHECK(m["gold_accuracy"].contains("student"));
  // per-annotator depth ignores other annotators' work
  CHECK(r.get("/api/v1/metrics?annotator=b", 200)["queue_depths"]["label"]["total"] == depth);
}

TEST_CASE("rounds: preconditions, conflict, completion, restart") {
  testing::TempDir dir;
  seed_data_dir(dir.path());
  std::promise<void> gate;
  std::shared_future<void> open = gate.get_future().share();
  auto config = config_for(dir.path());
  config.before_round = [open] { open.wait(); };

  std::size_t answered = 0;
  {
    Running r(config);
    CHECK(r.post("/api/v1/rounds", json::object(), 422)["error"]["kind"] == "precondition");
    r.get("/api/v1/rounds/round-0001", 404);

    answered = drain_labels(r, "ann");
    CHECK(answered > 3);
    CHECK(count_lines(dir / data_files::kAnnotations) == answered);

    const auto started = r.post("/api/v1/rounds", json::object(), 202);
    const auto id = started["round_id"].get<std::string>();
    CHECK(id == "round-0001");
    CHECK(r.get("/api/v1/rounds/" + id, 200)["status"] == "running");
    CHECK(r.get("/api/v1/metrics", 200)["round_running"] == true);
    r.post("/api/v1/rounds", json::object(), 409);
    gate.set_value();

    json status;
    for (int i = 0; i < 600; ++i) {
      status = r.get("/api/v1/rounds/" + id, 200);
      if (status["status"] != "running") break;
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    REQUIRE_MESSAGE(status["status"] == "done", status.dump());
    const auto& cmp = status["report"]["comparison"]["systems"];
    REQUIRE(cmp.is_array());
    CHECK(cmp.size() == 3);
    CHECK(status["report"]["training_examples"] == 3);
    CHECK(fs::exists(dir / data_files::kRounds / id / "checkpoint.json"));
    CHECK(r.get("/api/v1/metrics", 200)["round_running"] == false);
  }

  // A fresh service over the same directory picks up where the last one stopped.
  Running again(config);
  auto res = again.client.Get("/api/v1/queue/next?annotator=ann");
  REQUIRE(res);
  CHECK(res->status == 204);
  CHECK(again.get("/api/v1/queue/next?annotator=other", 200).contains("item_id"));
  const auto m = again.get("/api/v1/metrics", 200);
  CHECK(m["annotations"]["total"] == answered);
  CHECK(m["queue_depths"]["label"]["total"] == 0);
  CHECK(again.get("/api/v1/rounds/round-0001", 200)["status"] == "done");
  CHECK(again.post("/api/v1/rounds", json::object(), 202)["round_id"] == "round-0002");
  for (int i = 0; i < 600; ++i) {
    if (again.get("/api/v1/rounds/round-0002", 200)["status"] != "running") break;
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
}

TEST_CASE("static UI mount") {
  testing::TempDir dir;
  fs::create_directories(dir / "ui");
  write_text_atomic(dir / "ui" / "index.html", "<html>ok</html>");
  ServiceConfig c;
  c.data_dir = dir.path();
  c.ui_dir = dir / "ui";
  Running r(c);
  auto res = r.client.Get("/index.html");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->body == "<html>ok</html>");
}
