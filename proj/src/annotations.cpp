#include "silverloop/annotations.hpp"

#include <chrono>
#include <ctime>
#include <unistd.h>

#include "silverloop/error.hpp"

namespace silverloop {
namespace {

constexpr std::array<std::string_view, 3> kSourceNames = {"heldout", "active_round", "adjudication"};
constexpr std::array<std::string_view, 4> kVerdictNames = {"prefer_a", "prefer_b", "both_wrong", "unsure"};

std::FILE* open_append(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::FILE* f = std::fopen(path.c_str(), "ab");
  if (f == nullptr) throw IoError("cannot open '" + path.string() + "' for appending");
  return f;
}

void durable_append(std::FILE* f, const fs::path& path, const std::string& line) {
  if (std::fwrite(line.data(), 1, line.size(), f) != line.size() || std::fflush(f) != 0 || ::fsync(::fileno(f)) != 0) {
    throw IoError("append to '" + path.string() + "' failed");
  }
}

}  // namespace

std::string_view source_name(AnnotationSource s) { return kSourceNames[static_cast<std::size_t>(s)]; }

AnnotationSource parse_source(std::string_view name) {
  for (std::size_t i = 0; i < kSourceNames.size(); ++i) {
    if (kSourceNames[i] == name) return static_cast<AnnotationSource>(i);
  }
  throw ParseError("unknown annotation source '" + std::string(name) + "'");
}

std::string_view verdict_name(Verdict v) { return kVerdictNames[static_cast<std::size_t>(v)]; }

Verdict parse_verdict(std::string_view name) {
  for (std::size_t i = 0; i < kVerdictNames.size(); ++i) {
    if (kVerdictNames[i] == name) return static_cast<Verdict>(i);
  }
  throw InvalidLabelError("unknown verdict '" + std::string(name) +
                          "' (expected prefer_a, prefer_b, both_wrong or unsure)");
}

void to_json(json& j, const AnnotationRecord& r) {
  j = json{{"dedup_key", r.dedup_key},         {"report_id", r.report_id}, {"sentence_index", r.sentence_index},
           {"task", task_name(r.task)},        {"label", class_name(r.label)},
           {"annotator_id", r.annotator_id},   {"timestamp", r.timestamp},
           {"source", source_name(r.source)}};
}

void from_json(const json& j, AnnotationRecord& r) {
  r.dedup_key = j.at("dedup_key").get<std::string>();
  r.report_id = j.at("report_id").get<std::string>();
  r.sentence_index = j.at("sentence_index").get<std::int64_t>();
  r.task = task_from_name(j.at("task").get<std::string>());
  r.label = class_from_name(j.at("label").get<std::string>());
  r.annotator_id = j.at("annotator_id").get<std::string>();
  r.timestamp = j.value("timestamp", "");
  r.source = parse_source(j.at("source").get<std::string>());
}

void to_json(json& j, const AdjudicationRecord& r) {
  j = json{{"dedup_key", r.dedup_key},       {"task", task_name(r.task)},
           {"verdict", verdict_name(r.verdict)}, {"annotator_id", r.annotator_id},
           {"blinding_id", r.blinding_id},   {"timestamp", r.timestamp}};
}

void from_json(const json& j, AdjudicationRecord& r) {
  r.dedup_key = j.at("dedup_key").get<std::string>();
  r.task = task_from_name(j.at("task").get<std::string>());
  r.verdict = parse_verdict(j.at("verdict").get<std::string>());
  r.annotator_id = j.at("annotator_id").get<std::string>();
  r.blinding_id = j.at("blinding_id").get<std::string>();
  r.timestamp = j.value("timestamp", "");
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

AnnotationStore::AnnotationStore(fs::path path) : path_(std::move(path)) {
  if (fs::exists(path_)) {
    for_each_jsonl(path_, [&](const json& j, std::size_t) {
      auto r = j.get<AnnotationRecord>();
      require_valid(r.task, r.label);
      if (!keys_.insert({r.dedup_key, r.task, r.annotator_id, r.source}).second) {
        throw DuplicateError("annotation log repeats (" + r.dedup_key + ", " + std::string(task_name(r.task)) + ", " +
                             r.annotator_id + ")");
      }
      records_.push_back(std::move(r));
    });
  }
  file_ = open_append(path_);
}

AnnotationStore::~AnnotationStore() {
  if (file_ != nullptr) std::fclose(file_);
}

bool AnnotationStore::contains(const std::string& dedup_key, TaskId task, const std::string& annotator,
                               AnnotationSource source) const {
  return keys_.count({dedup_key, task, annotator, source}) > 0;
}

void AnnotationStore::append(AnnotationRecord record) {
  require_valid(record.task, record.label);
  Key key{record.dedup_key, record.task, record.annotator_id, record.source};
  if (keys_.count(key)) {
    throw DuplicateError("annotation for (" + record.dedup_key + ", " + std::string(task_name(record.task)) + ") by '" +
                         record.annotator_id + "' already recorded for source " +
                         std::string(source_name(record.source)));
  }
  if (record.timestamp.empty()) record.timestamp = utc_timestamp();
  durable_append(file_, path_, json(record).dump() + "\n");
  keys_.insert(std::move(key));
  records_.push_back(std::move(record));
}

AdjudicationStore::AdjudicationStore(fs::path path) : path_(std::move(path)) {
  if (fs::exists(path_)) {
    for_each_jsonl(path_, [&](const json& j, std::size_t) {
      auto r = j.get<AdjudicationRecord>();
      if (!keys_.insert({r.blinding_id, r.annotator_id}).second) {
        throw DuplicateError("adjudication log repeats (" + r.blinding_id + ", " + r.annotator_id + ")");
      }
      records_.push_back(std::move(r));
    });
  }
  file_ = open_append(path_);
}

AdjudicationStore::~AdjudicationStore() {
  if (file_ != nullptr) std::fclose(file_);
}

bool AdjudicationStore::contains(const std::string& blinding_id, const std::string& annotator) const {
  return keys_.count({blinding_id, annotator}) > 0;
}

void AdjudicationStore::append(AdjudicationRecord record) {
  std::pair<std::string, std::string> key{record.blinding_id, record.annotator_id};
  if (keys_.count(key)) {
    throw DuplicateError("verdict for '" + record.blinding_id + "' by '" + record.annotator_id + "' already recorded");
  }
  if (record.timestamp.empty()) record.timestamp = utc_timestamp();
  durable_append(file_, path_, json(record).dump() + "\n");
  keys_.insert(std::move(key));
  records_.push_back(std::move(record));
}

}  // namespace silverloop
