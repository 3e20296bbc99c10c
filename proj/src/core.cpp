#include "silverloop/core.hpp"

#include <cctype>

#include "silverloop/error.hpp"

namespace silverloop {
namespace {

constexpr std::array<std::string_view, kNumTasks> kTaskNames = {
    "no_finding",       "enlarged_cardiomediastinum",
    "cardiomegaly",     "lung_lesion",
    "airspace_opacity", "edema",
    "consolidation",    "pneumonia",
    "atelectasis",      "pneumothorax",
    "pleural_effusion", "pleural_other",
    "fracture",         "support_devices",
};

constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "no_mention", "negative", "uncertain", "positive"};

bool is_terminal_punct(char c) { return c == '.' || c == '!' || c == '?' || c == ';'; }

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

}  // namespace

std::string_view task_name(TaskId t) { return kTaskNames[index_of(t)]; }

std::optional<TaskId> parse_task(std::string_view name) {
  for (std::size_t i = 0; i < kNumTasks; ++i) {
    if (kTaskNames[i] == name) return kAllTasks[i];
  }
  return std::nullopt;
}

TaskId task_from_name(std::string_view name) {
  if (auto t = parse_task(name)) return *t;
  throw ParseError("unknown task '" + std::string(name) + "'");
}

std::string_view class_name(MentionClass c) { return kClassNames[index_of(c)]; }

std::optional<MentionClass> parse_class(std::string_view name) {
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    if (kClassNames[i] == name) return kAllClasses[i];
  }
  return std::nullopt;
}

MentionClass class_from_name(std::string_view name) {
  if (auto c = parse_class(name)) return *c;
  throw ParseError("unknown mention class '" + std::string(name) + "'");
}

std::size_t class_slot(TaskId t, MentionClass c) {
  require_valid(t, c);
  if (t == TaskId::no_finding) return c == MentionClass::negative ? 0 : 1;
  return index_of(c);
}

MentionClass slot_class(TaskId t, std::size_t slot) {
  if (t == TaskId::no_finding) return slot == 0 ? MentionClass::negative : MentionClass::positive;
  return kAllClasses.at(slot);
}

void require_valid(TaskId t, MentionClass c) {
  if (!is_valid_for(t, c)) {
    throw InvalidLabelError("label '" + std::string(class_name(c)) + "' is not valid for task '" +
                            std::string(task_name(t)) + "'");
  }
}

MentionClass derive_no_finding(const std::array<MentionClass, kNumTasks>& labels) {
  for (TaskId t : kAllTasks) {
    if (t == TaskId::no_finding) continue;
    MentionClass c = labels[index_of(t)];
    if (c != MentionClass::no_mention && c != MentionClass::negative) return MentionClass::negative;
  }
  return MentionClass::positive;
}

LabelVector::LabelVector() {
  labels_.fill(MentionClass::no_mention);
  labels_[index_of(TaskId::no_finding)] = MentionClass::positive;
}

LabelVector::LabelVector(const std::array<MentionClass, kNumTasks>& labels) : labels_(labels) {
  require_valid(TaskId::no_finding, labels_[index_of(TaskId::no_finding)]);
}

LabelVector LabelVector::from_map(const std::map<TaskId, MentionClass>& labels) {
  if (labels.size() != kNumTasks) {
    throw ValidationError("label vector needs all " + std::to_string(kNumTasks) +
                          " tasks, got " + std::to_string(labels.size()));
  }
  std::array<MentionClass, kNumTasks> values{};
  for (const auto& [task, cls] : labels) values[index_of(task)] = cls;
  return LabelVector(values);
}

LabelVector LabelVector::with_derived_no_finding(std::array<MentionClass, kNumTasks> labels) {
  labels[index_of(TaskId::no_finding)] = derive_no_finding(labels);
  return LabelVector(labels);
}

LabelVector LabelVector::with(TaskId t, MentionClass c) const {
  auto copy = labels_;
  copy[index_of(t)] = c;
  return LabelVector(copy);
}

void PartialLabelVector::set(TaskId t, MentionClass c) {
  require_valid(t, c);
  labels_[index_of(t)] = c;
}

std::size_t PartialLabelVector::size() const {
  std::size_t n = 0;
  for (const auto& l : labels_) n += l.has_value() ? 1 : 0;
  return n;
}

PartialLabelVector PartialLabelVector::from(const LabelVector& full) {
  PartialLabelVector p;
  for (TaskId t : kAllTasks) p.set(t, full[t]);
  return p;
}

std::string normalize_sentence(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char ch : text) {
    if (is_space(ch)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  // Stripping punctuation can expose more trailing space, and vice versa.
  while (!out.empty() && (is_terminal_punct(out.back()) || out.back() == ' ')) out.pop_back();
  return out;
}

SentenceRecord SentenceRecord::make(std::string report_id, std::int64_t index, std::string text) {
  SentenceRecord r{std::move(report_id), index, std::move(text), {}};
  r.dedup_key = normalize_sentence(r.text);
  return r;
}

void to_json(json& j, TaskId t) { j = std::string(task_name(t)); }
void from_json(const json& j, TaskId& t) { t = task_from_name(j.get<std::string>()); }
void to_json(json& j, MentionClass c) { j = std::string(class_name(c)); }
void from_json(const json& j, MentionClass& c) { c = class_from_name(j.get<std::string>()); }

void to_json(json& j, const LabelVector& v) {
  j = json::object();
  for (TaskId t : kAllTasks) j[std::string(task_name(t))] = class_name(v[t]);
}

void from_json(const json& j, LabelVector& v) {
  if (!j.is_object()) throw ParseError("labels must be an object");
  std::map<TaskId, MentionClass> m;
  for (const auto& [k, val] : j.items()) m[task_from_name(k)] = class_from_name(val.get<std::string>());
  v = LabelVector::from_map(m);
}

void to_json(json& j, const PartialLabelVector& v) {
  j = json::object();
  for (TaskId t : kAllTasks) {
    if (v[t]) j[std::string(task_name(t))] = class_name(*v[t]);
  }
}

void from_json(const json& j, PartialLabelVector& v) {
  if (!j.is_object()) throw ParseError("labels must be an object");
  v = PartialLabelVector{};
  for (const auto& [k, val] : j.items()) v.set(task_from_name(k), class_from_name(val.get<std::string>()));
}

void to_json(json& j, const SentenceRecord& r) {
  j = json{{"report_id", r.report_id}, {"sentence_index", r.sentence_index}, {"text", r.text}};
}

void from_json(const json& j, SentenceRecord& r) {
  r = SentenceRecord::make(j.at("report_id").get<std::string>(),
                           j.at("sentence_index").get<std::int64_t>(), j.at("text").get<std::string>());
}

void to_json(json& j, const LabelRecord& r) {
  j = json{{"report_id", r.report_id}, {"sentence_index", r.sentence_index}, {"labels", r.labels}};
}

void from_json(const json& j, LabelRecord& r) {
  r.report_id = j.at("report_id").get<std::string>();
  r.sentence_index = j.at("sentence_index").get<std::int64_t>();
  r.labels = j.at("labels").get<LabelVector>();
}

}  // namespace silverloop
