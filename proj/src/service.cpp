#include "silverloop/service.hpp"

#include <httplib.h>

#include <atomic>
#include <chrono>
#include <ctime>
#include <map>
#include <mutex>
#include <set>
#include <shared_mutex>
#include <thread>
#include <tuple>
#include <unordered_map>

#include "silverloop/error.hpp"
#include "silverloop/rule_labeler.hpp"

namespace silverloop {
namespace {

struct LabelItem {
  std::string item_id;
  std::string dedup_key;
  std::string report_id;
  std::int64_t sentence_index = 0;
  std::string text;
  TaskId task = TaskId::no_finding;
  AnnotationSource source = AnnotationSource::heldout;
};

struct RoundState {
  std::string status;  // running | done | failed
  std::string error;
  json report;
};

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, std::string_view kind, const std::string& message) {
  reply(res, status, json{{"error", {{"kind", kind}, {"message", message}}}});
}

json choices_for(TaskId t) {
  json out = json::array();
  for (auto c : kAllClasses) {
    if (is_valid_for(t, c)) out.push_back(class_name(c));
  }
  return out;
}

std::string hour_ago_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now() - std::chrono::hours(1));
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

struct Service::Impl {
  ServiceConfig config;
  httplib::Server server;

  std::vector<SentenceRecord> corpus;
  std::optional<std::vector<LabelRecord>> teacher;
  std::optional<Checkpoint> model;
  std::optional<std::vector<LabelRecord>> student;

  std::vector<LabelItem> label_items;
  std::unordered_map<std::string, std::size_t> label_index;
  AdjudicationQueue adjudication;
  std::unordered_map<std::string, std::size_t> adjudication_index;

  AnnotationStore annotations;
  AdjudicationStore adjudications;
  mutable std::shared_mutex state;

  std::mutex rounds_mutex;
  std::map<std::string, RoundState> rounds;
  std::atomic<bool> round_running{false};
  std::size_t next_round = 1;
  std::jthread worker;

  explicit Impl(ServiceConfig c)
      : config(std::move(c)),
        annotations(config.data_dir / data_files::kAnnotations),
        adjudications(config.data_dir / data_files::kAdjudications) {
    load();
    routes();
  }

  fs::path file(const char* name) const { return config.data_dir / name; }

  void load() {
    if (fs::exists(file(data_files::kCorpus))) corpus = read_corpus(file(data_files::kCorpus));
    if (config.rules) {
      teacher = classify_corpus(corpus, CompiledRuleSet(load_rules(*config.rules)), 1, nullptr);
    } else if (fs::exists(file(data_files::kLabels))) {
      teacher = read_labels(file(data_files::kLabels));
    }
    if (config.checkpoint) {
      model = load_checkpoint(*config.checkpoint);
      student = predict_corpus(corpus, model->model, 256).labels;
    }
    if (fs::exists(file(data_files::kHeldout))) {
      std::size_t n = 0;
      for (const auto& h : read_jsonl<HeldoutItem>(file(data_files::kHeldout))) {
        add_label_item({"h-" + std::to_string(n++), h.dedup_key, h.report_id, h.sentence_index, h.text, h.task,
                        AnnotationSource::heldout});
      }
    }
    if (fs::exists(file(data_files::kSelection))) {
      std::size_t n = 0;
      for (const auto& s : read_jsonl<SelectedItem>(file(data_files::kSelection))) {
        for (TaskId t : s.tasks) {
          add_label_item({"s-" + std::to_string(n) + "-" + std::string(task_name(t)), s.dedup_key, s.report_id,
                          s.sentence_index, s.text, t, AnnotationSource::active_round});
        }
        ++n;
      }
    }
    if (fs::exists(file(data_files::kAdjudicationQueue))) {
      json items = json::array();
      for_each_jsonl(file(data_files::kAdjudicationQueue), [&](const json& j, std::size_t) { items.push_back(j); });
      const json unblinding =
          fs::exists(file(data_files::kUnblinding)) ? read_json(file(data_files::kUnblinding)) : json();
      adjudication = queue_from_json(items, unblinding);
      for (std::size_t i = 0; i < adjudication.items.size(); ++i) {
        adjudication_index.emplace(adjudication.items[i].blinding_id, i);
      }
    }
    const auto rounds_dir = file(data_files::kRounds);
    if (fs::exists(rounds_dir)) {
      for (const auto& entry : fs::directory_iterator(rounds_dir)) {
        if (!entry.is_directory()) continue;
        const auto id = entry.path().filename().string();
        RoundState st{"done", "", json()};
        if (fs::exists(entry.path() / "report.json")) st.report = read_json(entry.path() / "report.json");
        else st.status = "failed";
        rounds.emplace(id, std::move(st));
        ++next_round;
      }
    }
  }

  void add_label_item(LabelItem item) {
    if (!label_index.emplace(item.item_id, label_items.size()).second) return;
    label_items.push_back(std::move(item));
  }

  static json label_item_json(const LabelItem& i) {
    return json{{"item_id", i.item_id},     {"mode", "label"},
                {"dedup_key", i.dedup_key}, {"report_id", i.report_id},
                {"sentence_index", i.sentence_index}, {"text", i.text},
                {"task", task_name(i.task)}, {"choices", choices_for(i.task)}};
  }

  static json adjudication_item_json(const QueueEntry& e) {
    return json{{"item_id", e.blinding_id},
                {"mode", "adjudicate"},
                {"dedup_key", e.dedup_key},
                {"text", e.text},
                {"task", task_name(e.task)},
                {"label_a", class_name(e.label_a)},
                {"label_b", class_name(e.label_b)},
                {"choices", {"prefer_a", "prefer_b", "both_wrong", "unsure"}}};
  }

  void routes() {
    server.Get("/api/v1/queue/next", [this](const httplib::Request& req, httplib::Response& res) {
      queue_next(req, res);
    });
    server.Post("/api/v1/annotations", [this](const httplib::Request& req, httplib::Response& res) {
      post_annotation(req, res);
    });
    server.Post("/api/v1/adjudications", [this](const httplib::Request& req, httplib::Response& res) {
      post_adjudication(req, res);
    });
    server.Get("/api/v1/metrics", [this](const httplib::Request& req, httplib::Response& res) { metrics(req, res); });
    server.Post("/api/v1/rounds", [this](const httplib::Request&, httplib::Response& res) { start_round(res); });
    server.Get(R"(/api/v1/rounds/([A-Za-z0-9_-]+))", [this](const httplib::Request& req, httplib::Response& res) {
      get_round(req.matches[1].str(), res);
    });
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        reply_error(res, 500, "internal", e.what());
      }
    });
    if (config.ui_dir && fs::is_directory(*config.ui_dir)) server.set_mount_point("/", config.ui_dir->string());
  }

  void queue_next(const httplib::Request& req, httplib::Response& res) {
    const std::string mode = req.has_param("mode") ? req.get_param_value("mode") : "label";
    if (mode != "label" && mode != "adjudicate") {
      return reply_error(res, 400, "validation", "unknown mode '" + mode + "' (expected label or adjudicate)");
    }
    std::optional<TaskId> task;
    if (req.has_param("task")) {
      task = parse_task(req.get_param_value("task"));
      if (!task) return reply_error(res, 400, "validation", "unknown task '" + req.get_param_value("task") + "'");
    }
    if (!req.has_param("annotator") || req.get_param_value("annotator").empty()) {
      return reply_error(res, 400, "validation", "annotator is required");
    }
    const auto annotator = req.get_param_value("annotator");
    std::shared_lock lock(state);
    if (mode == "label") {
      for (const auto& i : label_items) {
        if (task && i.task != *task) continue;
        if (annotations.contains(i.dedup_key, i.task, annotator, i.source)) continue;
        return reply(res, 200, label_item_json(i));
      }
    } else {
      for (const auto& e : adjudication.items) {
        if (task && e.task != *task) continue;
        if (adjudications.contains(e.blinding_id, annotator)) continue;
        return reply(res, 200, adjudication_item_json(e));
      }
    }
    res.status = 204;
  }

  static std::optional<json> parse_body(const httplib::Request& req, httplib::Response& res,
                                        std::initializer_list<const char*> fields) {
    json body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object()) {
      reply_error(res, 400, "parse", "request body must be a JSON object");
      return std::nullopt;
    }
    for (const char* f : fields) {
      if (!body.contains(f) || !body[f].is_string() || body[f].get<std::string>().empty()) {
        reply_error(res, 400, "validation", std::string("field '") + f + "' must be a non-empty string");
        return std::nullopt;
      }
    }
    return body;
  }

  void post_annotation(const httplib::Request& req, httplib::Response& res) {
    auto body = parse_body(req, res, {"item_id", "label", "annotator"});
    if (!body) return;
    const auto item_id = (*body)["item_id"].get<std::string>();
    std::unique_lock lock(state);
    auto it = label_index.find(item_id);
    if (it == label_index.end()) return reply_error(res, 404, "not_found", "unknown item '" + item_id + "'");
    const auto& item = label_items[it->second];
    const auto label = parse_class((*body)["label"].get<std::string>());
    if (!label || !is_valid_for(item.task, *label)) {
      return reply_error(res, 422, "invalid_label",
                         "'" + (*body)["label"].get<std::string>() + "' is not a valid label for " +
                             std::string(task_name(item.task)));
    }
    try {
      record_annotation(annotations, {item.dedup_key, item.report_id, item.sentence_index, item.task, *label,
                                      (*body)["annotator"].get<std::string>(), "", item.source});
    } catch (const DuplicateError& e) {
      return reply_error(res, 409, e.kind(), e.what());
    }
    reply(res, 200, json{{"status", "ok"}, {"item_id", item_id}, {"stored", annotations.size()}});
  }

  void post_adjudication(const httplib::Request& req, httplib::Response& res) {
    auto body = parse_body(req, res, {"item_id", "verdict", "annotator"});
    if (!body) return;
    const auto item_id = (*body)["item_id"].get<std::string>();
    std::unique_lock lock(state);
    auto it = adjudication_index.find(item_id);
    if (it == adjudication_index.end()) return reply_error(res, 404, "not_found", "unknown item '" + item_id + "'");
    const auto& item = adjudication.items[it->second];
    Verdict verdict;
    try {
      verdict = parse_verdict((*body)["verdict"].get<std::string>());
    } catch (const Error& e) {
      return reply_error(res, 422, e.kind(), e.what());
    }
    try {
      adjudications.append({item.dedup_key, item.task, verdict, (*body)["annotator"].get<std::string>(), item_id, ""});
    } catch (const DuplicateError& e) {
      return reply_error(res, 409, e.kind(), e.what());
    }
    reply(res, 200, json{{"status", "ok"}, {"item_id", item_id}, {"stored", adjudications.size()}});
  }

  void metrics(const httplib::Request& req, httplib::Response& res) {
    const std::string annotator = req.has_param("annotator") ? req.get_param_value("annotator") : "";
    std::shared_lock lock(state);
    std::set<std::tuple<std::string, TaskId, AnnotationSource>> answered;
    std::map<AnnotationSource, std::size_t> by_source;
    std::size_t last_hour = 0;
    const auto since = hour_ago_timestamp();
    std::vector<AnnotationRecord> heldout;
    for (const auto& a : annotations.records()) {
      if (annotator.empty() || a.annotator_id == annotator) answered.insert({a.dedup_key, a.task, a.source});
      ++by_source[a.source];
      if (a.timestamp >= since) ++last_hour;
      if (a.source == AnnotationSource::heldout) heldout.push_back(a);
    }
    std::set<std::string> judged;
    for (const auto& v : adjudications.records()) {
      if (annotator.empty() || v.annotator_id == annotator) judged.insert(v.blinding_id);
    }

    json label_depth = json::object();
    json adj_depth = json::object();
    std::size_t label_total = 0;
    std::size_t adj_total = 0;
    for (TaskId t : kAllTasks) {
      label_depth[std::string(task_name(t))] = 0;
      adj_depth[std::string(task_name(t))] = 0;
    }
    for (const auto& i : label_items) {
      if (answered.count({i.dedup_key, i.task, i.source})) continue;
      label_depth[std::string(task_name(i.task))] = label_depth[std::string(task_name(i.task))].get<int>() + 1;
      ++label_total;
    }
    for (const auto& e : adjudication.items) {
      if (judged.count(e.blinding_id)) continue;
      adj_depth[std::string(task_name(e.task))] = adj_depth[std::string(task_name(e.task))].get<int>() + 1;
      ++adj_total;
    }
    json counts = json::object();
    for (auto s : {AnnotationSource::heldout, AnnotationSource::active_round, AnnotationSource::adjudication}) {
      counts[std::string(source_name(s))] = by_source[s];
    }
    json out{{"queue_depths",
              {{"label", {{"total", label_total}, {"per_task", label_depth}}},
               {"adjudicate", {{"total", adj_total}, {"per_task", adj_depth}}}}},
             {"annotations", {{"total", annotations.size()}, {"by_source", counts}, {"last_hour", last_hour}}},
             {"adjudications", {{"total", adjudications.size()}}},
             {"round_running", round_running.load()}};
    if (teacher && student) out["parity"] = to_json(parity(*teacher, *student));
    if (!heldout.empty()) {
      json gold = json::object();
      try {
        if (teacher) gold["teacher"] = to_json(gold_accuracy(heldout, *teacher));
        if (student) gold["student"] = to_json(gold_accuracy(heldout, *student));
      } catch (const NotFoundError&) {
        // annotations for sentences outside the loaded corpus
      }
      if (!gold.empty()) out["gold_accuracy"] = gold;
    }
    reply(res, 200, out);
  }

  void start_round(httplib::Response& res) {
    std::vector<AnnotationRecord> snapshot;
    {
      std::shared_lock lock(state);
      if (!model) return reply_error(res, 422, "precondition", "no checkpoint loaded (start with --checkpoint)");
      if (!teacher) return reply_error(res, 422, "precondition", "no teacher labels (start with --rules)");
      snapshot = annotations.records();
    }
    try {
      check_round_preconditions(snapshot);
    } catch (const Error& e) {
      return reply_error(res, 422, e.kind(), e.what());
    }
    bool expected = false;
    if (!round_running.compare_exchange_strong(expected, true)) {
      return reply_error(res, 409, "conflict", "a round is already running");
    }
    std::string id;
    {
      std::lock_guard lock(rounds_mutex);
      char buf[32];
      std::snprintf(buf, sizeof buf, "round-%04zu", next_round++);
      id = buf;
      rounds[id] = {"running", "", json()};
    }
    if (worker.joinable()) worker.join();
    worker = std::jthread([this, id, snapshot = std::move(snapshot)] { run(id, snapshot); });
    reply(res, 202, json{{"round_id", id}, {"status", "running"}});
  }

  void run(const std::string& id, const std::vector<AnnotationRecord>& snapshot) {
    RoundState done{"done", "", json()};
    try {
      if (config.before_round) config.before_round();
      Checkpoint start = [&] {
        std::shared_lock lock(state);
        return *model;
      }();
      auto result = run_round(*teacher, start, snapshot, corpus, config.round);
      const auto dir = file(data_files::kRounds) / id;
      fs::create_directories(dir);
      save_checkpoint(dir / "checkpoint.json", result.checkpoint);
      done.report = json{{"round_id", id},
                         {"training_examples", result.training_examples},
                         {"training_pairs", result.training_pairs},
                         {"checkpoint", (dir / "checkpoint.json").string()},
                         {"comparison", gold_comparison_json(result.comparison)}};
      write_json(dir / "report.json", done.report);
      auto labels = predict_corpus(corpus, result.checkpoint.model, 256).labels;
      std::unique_lock lock(state);
      model = std::move(result.checkpoint);
      student = std::move(labels);
    } catch (const std::exception& e) {
      done = {"failed", e.what(), json()};
    }
    {
      std::lock_guard lock(rounds_mutex);
      rounds[id] = std::move(done);
    }
    round_running = false;
  }

  void get_round(const std::string& id, httplib::Response& res) {
    std::lock_guard lock(rounds_mutex);
    auto it = rounds.find(id);
    if (it == rounds.end()) return reply_error(res, 404, "not_found", "unknown round '" + id + "'");
    json out{{"round_id", id}, {"status", it->second.status}};
    if (!it->second.error.empty()) out["error"] = it->second.error;
    if (!it->second.report.is_null()) out["report"] = it->second.report;
    reply(res, 200, out);
  }
};

Service::Service(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Service::~Service() {
  stop();
  if (impl_->worker.joinable()) impl_->worker.join();
}

int Service::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw IoError("cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void Service::serve() { impl_->server.listen_after_bind(); }

void Service::stop() { impl_->server.stop(); }

}  // namespace silverloop
