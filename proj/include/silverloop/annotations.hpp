#pragma once

#include <cstdint>
#include <cstdio>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "silverloop/core.hpp"
#include "silverloop/io.hpp"

namespace silverloop {

enum class AnnotationSource { heldout, active_round, adjudication };

std::string_view source_name(AnnotationSource s);
AnnotationSource parse_source(std::string_view name);

struct AnnotationRecord {
  std::string dedup_key;
  std::string report_id;
  std::int64_t sentence_index = 0;
  TaskId task = TaskId::no_finding;
  MentionClass label = MentionClass::negative;
  std::string annotator_id;
  std::string timestamp;
  AnnotationSource source = AnnotationSource::heldout;

  SentenceId sentence() const { return {report_id, sentence_index}; }
  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

void to_json(json& j, const AnnotationRecord& r);
void from_json(const json& j, AnnotationRecord& r);

enum class Verdict { prefer_a, prefer_b, both_wrong, unsure };

std::string_view verdict_name(Verdict v);
Verdict parse_verdict(std::string_view name);

struct AdjudicationRecord {
  std::string dedup_key;
  TaskId task = TaskId::no_finding;
  Verdict verdict = Verdict::unsure;
  std::string annotator_id;
  std::string blinding_id;
  std::string timestamp;
  friend bool operator==(const AdjudicationRecord&, const AdjudicationRecord&) = default;
};

void to_json(json& j, const AdjudicationRecord& r);
void from_json(const json& j, AdjudicationRecord& r);

// Current UTC time, ISO 8601 with second precision.
std::string utc_timestamp();

// Append-only JSONL log. Opening replays the file; append() returns only after
// the line is flushed and fsync'ed. Not internally synchronised: one writer.
class AnnotationStore {
 public:
  explicit AnnotationStore(fs::path path);
  ~AnnotationStore();
  AnnotationStore(const AnnotationStore&) = delete;
  AnnotationStore& operator=(const AnnotationStore&) = delete;

  // Throws InvalidLabelError or DuplicateError; the store is unchanged then.
  void append(AnnotationRecord record);
  bool contains(const std::string& dedup_key, TaskId task, const std::string& annotator,
                AnnotationSource source) const;

  const std::vector<AnnotationRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  const fs::path& path() const { return path_; }

 private:
  using Key = std::tuple<std::string, TaskId, std::string, AnnotationSource>;
  fs::path path_;
  std::FILE* file_ = nullptr;
  std::vector<AnnotationRecord> records_;
  std::set<Key> keys_;
};

// Same durability contract; one verdict per (blinding_id, annotator).
class AdjudicationStore {
 public:
  explicit AdjudicationStore(fs::path path);
  ~AdjudicationStore();
  AdjudicationStore(const AdjudicationStore&) = delete;
  AdjudicationStore& operator=(const AdjudicationStore&) = delete;

  void append(AdjudicationRecord record);
  bool contains(const std::string& blinding_id, const std::string& annotator) const;
  const std::vector<AdjudicationRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }

 private:
  fs::path path_;
  std::FILE* file_ = nullptr;
  std::vector<AdjudicationRecord> records_;
  std::set<std::pair<std::string, std::string>> keys_;
};

}  // namespace silverloop
