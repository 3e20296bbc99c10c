#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

namespace silverloop {

using nlohmann::json;

// Canonical ordering: every report, matrix and file follows this order.
enum class TaskId : std::uint8_t {
  no_finding,
  enlarged_cardiomediastinum,
  cardiomegaly,
  lung_lesion,
  airspace_opacity,
  edema,
  consolidation,
  pneumonia,
  atelectasis,
  pneumothorax,
  pleural_effusion,
  pleural_other,
  fracture,
  support_devices,
};

inline constexpr std::size_t kNumTasks = 14;

inline constexpr std::array<TaskId, kNumTasks> kAllTasks = {
    TaskId::no_finding,       TaskId::enlarged_cardiomediastinum,
    TaskId::cardiomegaly,     TaskId::lung_lesion,
    TaskId::airspace_opacity, TaskId::edema,
    TaskId::consolidation,    TaskId::pneumonia,
    TaskId::atelectasis,      TaskId::pneumothorax,
    TaskId::pleural_effusion, TaskId::pleural_other,
    TaskId::fracture,         TaskId::support_devices,
};

constexpr std::size_t index_of(TaskId t) { return static_cast<std::size_t>(t); }

std::string_view task_name(TaskId t);
std::optional<TaskId> parse_task(std::string_view name);
// Throws ParseError on unknown names.
TaskId task_from_name(std::string_view name);

// Ordinal order doubles as the merge precedence and the argmax tie-break order.
enum class MentionClass : std::uint8_t { no_mention, negative, uncertain, positive };

inline constexpr std::size_t kNumClasses = 4;

inline constexpr std::array<MentionClass, kNumClasses> kAllClasses = {
    MentionClass::no_mention, MentionClass::negative, MentionClass::uncertain,
    MentionClass::positive};

constexpr std::size_t index_of(MentionClass c) { return static_cast<std::size_t>(c); }

std::string_view class_name(MentionClass c);
std::optional<MentionClass> parse_class(std::string_view name);
MentionClass class_from_name(std::string_view name);

// no_finding only admits {negative, positive}.
constexpr bool is_valid_for(TaskId t, MentionClass c) {
  return t != TaskId::no_finding || c == MentionClass::negative || c == MentionClass::positive;
}

constexpr std::size_t num_classes(TaskId t) { return t == TaskId::no_finding ? 2 : 4; }

// Position of a class inside a task's output vector (valid classes in ordinal order).
std::size_t class_slot(TaskId t, MentionClass c);
MentionClass slot_class(TaskId t, std::size_t slot);

// Throws InvalidLabelError when `c` is not admissible for `t`.
void require_valid(TaskId t, MentionClass c);

class LabelVector {
 public:
  // Sentence with no findings at all: every task no_mention, no_finding positive.
  LabelVector();
  explicit LabelVector(const std::array<MentionClass, kNumTasks>& labels);

  // Requires every task to be present.
  static LabelVector from_map(const std::map<TaskId, MentionClass>& labels);

  // Applies the sentence-level no_finding rule to the 13 finding tasks.
  static LabelVector with_derived_no_finding(std::array<MentionClass, kNumTasks> labels);

  MentionClass operator[](TaskId t) const { return labels_[index_of(t)]; }
  const std::array<MentionClass, kNumTasks>& values() const { return labels_; }

  LabelVector with(TaskId t, MentionClass c) const;

  friend bool operator==(const LabelVector&, const LabelVector&) = default;

 private:
  std::array<MentionClass, kNumTasks> labels_;
};

// Positive iff every finding task is no_mention or negative.
MentionClass derive_no_finding(const std::array<MentionClass, kNumTasks>& labels);

class PartialLabelVector {
 public:
  PartialLabelVector() = default;

  void set(TaskId t, MentionClass c);
  void erase(TaskId t) { labels_[index_of(t)].reset(); }
  const std::optional<MentionClass>& operator[](TaskId t) const { return labels_[index_of(t)]; }
  std::size_t size() const;
  bool empty() const { return size() == 0; }

  static PartialLabelVector from(const LabelVector& full);

  friend bool operator==(const PartialLabelVector&, const PartialLabelVector&) = default;

 private:
  std::array<std::optional<MentionClass>, kNumTasks> labels_{};
};

// Lowercase, whitespace collapsed, terminal punctuation (.!?;) stripped.
std::string normalize_sentence(std::string_view text);

struct SentenceId {
  std::string report_id;
  std::int64_t sentence_index = 0;

  std::string str() const { return report_id + "#" + std::to_string(sentence_index); }
  friend auto operator<=>(const SentenceId&, const SentenceId&) = default;
};

struct SentenceRecord {
  std::string report_id;
  std::int64_t sentence_index = 0;
  std::string text;
  std::string dedup_key;

  static SentenceRecord make(std::string report_id, std::int64_t index, std::string text);
  SentenceId id() const { return {report_id, sentence_index}; }
  friend bool operator==(const SentenceRecord&, const SentenceRecord&) = default;
};

struct LabelRecord {
  std::string report_id;
  std::int64_t sentence_index = 0;
  LabelVector labels;

  SentenceId id() const { return {report_id, sentence_index}; }
  friend bool operator==(const LabelRecord&, const LabelRecord&) = default;
};

void to_json(json& j, TaskId t);
void from_json(const json& j, TaskId& t);
void to_json(json& j, MentionClass c);
void from_json(const json& j, MentionClass& c);
void to_json(json& j, const LabelVector& v);
void from_json(const json& j, LabelVector& v);
void to_json(json& j, const PartialLabelVector& v);
void from_json(const json& j, PartialLabelVector& v);
// dedup_key is recomputed on decode, never read from the file.
void to_json(json& j, const SentenceRecord& r);
void from_json(const json& j, SentenceRecord& r);
void to_json(json& j, const LabelRecord& r);
void from_json(const json& j, LabelRecord& r);

}  // namespace silverloop

template <>
struct std::hash<silverloop::SentenceId> {
  std::size_t operator()(const silverloop::SentenceId& id) const noexcept {
    return std::hash<std::string>{}(id.report_id) * 1000003u ^
           std::hash<std::int64_t>{}(id.sentence_index);
  }
};
