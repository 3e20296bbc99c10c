#include "silverloop/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "silverloop/error.hpp"

namespace silverloop {
namespace {

void check_aligned(std::span<const LabelRecord> ref, std::span<const LabelRecord> pred) {
  const std::size_t n = std::min(ref.size(), pred.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (ref[i].id() != pred[i].id()) {
      throw MisalignedError("files diverge at position " + std::to_string(i) + ": reference " + ref[i].id().str() +
                            " vs prediction " + pred[i].id().str());
    }
  }
  if (ref.size() != pred.size()) {
    const auto& longer = ref.size() > pred.size() ? ref : pred;
    throw MisalignedError("files differ in length (" + std::to_string(ref.size()) + " vs " +
                          std::to_string(pred.size()) + "); first unmatched key " + longer[n].id().str());
  }
}

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.append(w - s.size(), ' ');
  return s;
}

std::string lpad(std::string s, std::size_t w) {
  if (s.size() < w) s.insert(0, w - s.size(), ' ');
  return s;
}

}  // namespace

KeyFilter KeyFilter::from(std::span<const SentenceRecord> corpus, std::span<const std::string> keys) {
  KeyFilter f;
  for (const auto& s : corpus) f.key_of.emplace(s.id(), s.dedup_key);
  f.keys.insert(keys.begin(), keys.end());
  return f;
}

bool KeyFilter::admits(const SentenceId& id) const {
  auto it = key_of.find(id);
  if (it == key_of.end()) throw NotFoundError("no corpus sentence for " + id.str());
  return keys.count(it->second) > 0;
}

RatioMatrix ParityReport::row_normalized(TaskId t) const {
  RatioMatrix out{};
  const auto& m = confusion[index_of(t)];
  for (std::size_t r = 0; r < kNumClasses; ++r) {
    std::uint64_t row = 0;
    for (auto c : m[r]) row += c;
    for (std::size_t c = 0; c < kNumClasses; ++c) out[r][c] = ratio(m[r][c], row);
  }
  return out;
}

RatioMatrix ParityReport::log_scaled(TaskId t) const {
  RatioMatrix out{};
  const auto& m = confusion[index_of(t)];
  for (std::size_t r = 0; r < kNumClasses; ++r) {
    for (std::size_t c = 0; c < kNumClasses; ++c) out[r][c] = std::log10(1.0 + static_cast<double>(m[r][c]));
  }
  return out;
}

json to_json(const ParityReport& r) {
  json per_task = json::object();
  for (TaskId t : kAllTasks) {
    const auto i = index_of(t);
    json matrix = json::array();
    for (const auto& row : r.confusion[i]) matrix.push_back(row);
    per_task[std::string(task_name(t))] = {
        {"pairs", r.per_task_pairs[i]}, {"failure", r.per_task_failure[i]}, {"confusion", matrix}};
  }
  return json{{"schema", "parity"},
              {"schema_version", kReportSchemaVersion},
              {"n_sentences", r.n_sentences},
              {"n_pairs", r.n_pairs},
              {"n_matches", r.n_matches},
              {"overall_match", r.overall_match},
              {"task_macro_match", r.task_macro_match},
              {"class_order", {"no_mention", "negative", "uncertain", "positive"}},
              {"per_task", per_task}};
}

ParityReport parity(std::span<const LabelRecord> reference, std::span<const LabelRecord> prediction,
                    const KeyFilter* restrict_to) {
  check_aligned(reference, prediction);
  ParityReport r;
  std::array<std::uint64_t, kNumTasks> matches{};
  for (std::size_t i = 0; i < reference.size(); ++i) {
    if (restrict_to != nullptr && !restrict_to->admits(reference[i].id())) continue;
    ++r.n_sentences;
    for (TaskId t : kAllTasks) {
      const auto ref = reference[i].labels[t];
      const auto pred = prediction[i].labels[t];
      ++r.confusion[index_of(t)][index_of(ref)][index_of(pred)];
      ++r.per_task_pairs[index_of(t)];
      if (ref == pred) ++matches[index_of(t)];
    }
  }
  double macro = 0.0;
  for (std::size_t i = 0; i < kNumTasks; ++i) {
    r.n_pairs += r.per_task_pairs[i];
    r.n_matches += matches[i];
    r.per_task_failure[i] = r.per_task_pairs[i] == 0 ? 0.0 : 1.0 - ratio(matches[i], r.per_task_pairs[i]);
    macro += r.per_task_pairs[i] == 0 ? 1.0 : ratio(matches[i], r.per_task_pairs[i]);
  }
  r.overall_match = r.n_pairs == 0 ? 1.0 : ratio(r.n_matches, r.n_pairs);
  r.task_macro_match = macro / static_cast<double>(kNumTasks);
  return r;
}

std::array<double, kNumTasks> majority_baseline(std::span<const LabelRecord> reference) {
  if (reference.empty()) throw PreconditionError("majority baseline needs at least one labeled sentence");
  std::array<double, kNumTasks> out{};
  for (TaskId t : kAllTasks) {
    std::array<std::uint64_t, kNumClasses> counts{};
    for (const auto& r : reference) ++counts[index_of(r.labels[t])];
    std::size_t best = 0;
    for (std::size_t c = 1; c < kNumClasses; ++c) {
      if (counts[c] > counts[best]) best = c;
    }
    out[index_of(t)] = 1.0 - ratio(counts[best], reference.size());
  }
  return out;
}

std::string render_failure_table(const ParityReport& report, const std::array<double, kNumTasks>& baseline) {
  std::ostringstream out;
  out << "Failure-to-match rate (%), smaller is better\n";
  out << pad("Task", 28) << lpad("Majority Class", 16) << lpad("Student", 10) << "\n";
  for (TaskId t : kAllTasks) {
    out << pad(std::string(task_name(t)), 28) << lpad(fmt("%.2f", 100.0 * baseline[index_of(t)]), 16)
        << lpad(fmt("%.2f", 100.0 * report.per_task_failure[index_of(t)]), 10) << "\n";
  }
  out << "overall match: " << fmt("%.4f", 100.0 * report.overall_match) << "% over " << report.n_pairs
      << " pairs (" << report.n_sentences << " sentences); task-macro match "
      << fmt("%.4f", 100.0 * report.task_macro_match) << "%\n";
  return out.str();
}

std::string render_confusion(const ParityReport& report) {
  std::ostringstream out;
  const char* abbrev[] = {"none", "neg", "unc", "pos"};
  for (TaskId t : kAllTasks) {
    const auto& m = report.confusion[index_of(t)];
    const auto norm = report.row_normalized(t);
    const auto logm = report.log_scaled(t);
    out << task_name(t) << " (rows: reference, columns: prediction)\n";
    out << pad("", 6);
    for (auto a : abbrev) out << lpad(a, 10);
    out << "   |";
    for (auto a : abbrev) out << lpad(a, 7);
    out << "   |";
    for (auto a : abbrev) out << lpad(a, 7);
    out << "\n";
    for (std::size_t r = 0; r < kNumClasses; ++r) {
      out << pad(abbrev[r], 6);
      for (std::size_t c = 0; c < kNumClasses; ++c) out << lpad(std::to_string(m[r][c]), 10);
      out << "   |";
      for (std::size_t c = 0; c < kNumClasses; ++c) out << lpad(fmt("%.2f", logm[r][c]), 7);
      out << "   |";
      for (std::size_t c = 0; c < kNumClasses; ++c) out << lpad(fmt("%.3f", norm[r][c]), 7);
      out << "\n";
    }
    out << "\n";
  }
  return out.str();
}

double F1Counts::f1() const {
  const std::uint64_t den = 2 * tp + fp + fn;
  return den == 0 ? 0.0 : static_cast<double>(2 * tp) / static_cast<double>(den);
}

F1Counts& F1Counts::operator+=(const F1Counts& o) {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  return *this;
}

std::string_view f1_kind_name(F1Kind k) {
  switch (k) {
    case F1Kind::mention:
      return "mention";
    case F1Kind::negation:
      return "negation";
    case F1Kind::uncertainty:
      return "uncertainty";
  }
  return "";
}

json to_json(const F1Report& r) {
  json per_task = json::object();
  for (TaskId t : kAllTasks) {
    if (t == TaskId::no_finding) continue;
    json entry = json::object();
    for (auto k : kAllF1Kinds) entry[std::string(f1_kind_name(k))] = r.task_f1(t, k);
    per_task[std::string(task_name(t))] = entry;
  }
  json micro = json::object();
  for (auto k : kAllF1Kinds) micro[std::string(f1_kind_name(k))] = r.micro_f1(k);
  return json{{"schema", "f1"}, {"schema_version", kReportSchemaVersion}, {"micro", micro}, {"per_task", per_task}};
}

F1Report f1(std::span<const LabelRecord> reference, std::span<const LabelRecord> prediction) {
  check_aligned(reference, prediction);
  F1Report r;
  auto member = [](F1Kind k, MentionClass c) {
    switch (k) {
      case F1Kind::mention:
        return c != MentionClass::no_mention;
      case F1Kind::negation:
        return c == MentionClass::negative;
      case F1Kind::uncertainty:
        return c == MentionClass::uncertain;
    }
    return false;
  };
  for (std::size_t i = 0; i < reference.size(); ++i) {
    for (TaskId t : kAllTasks) {
      if (t == TaskId::no_finding) continue;
      for (auto k : kAllF1Kinds) {
        const bool in_ref = member(k, reference[i].labels[t]);
        const bool in_pred = member(k, prediction[i].labels[t]);
        auto& counts = r.per_task[index_of(t)][static_cast<std::size_t>(k)];
        if (in_ref && in_pred) ++counts.tp;
        if (!in_ref && in_pred) ++counts.fp;
        if (in_ref && !in_pred) ++counts.fn;
      }
    }
  }
  for (const auto& task : r.per_task) {
    for (std::size_t k = 0; k < 3; ++k) r.micro[k] += task[k];
  }
  return r;
}

std::optional<double> GoldAccuracy::task(TaskId t) const {
  if (total[index_of(t)] == 0) return std::nullopt;
  return ratio(correct[index_of(t)], total[index_of(t)]);
}

json to_json(const GoldAccuracy& g) {
  json per_task = json::object();
  for (TaskId t : kAllTasks) {
    if (auto a = g.task(t)) {
      per_task[std::string(task_name(t))] = {
          {"accuracy", *a}, {"correct", g.correct[index_of(t)]}, {"total", g.total[index_of(t)]}};
    }
  }
  return json{{"macro", g.macro}, {"per_task", per_task}};
}

GoldAccuracy gold_accuracy(std::span<const AnnotationRecord> gold, std::span<const LabelRecord> prediction) {
  std::unordered_map<SentenceId, const LabelVector*> by_id;
  for (const auto& p : prediction) by_id.emplace(p.id(), &p.labels);
  GoldAccuracy g;
  for (const auto& a : gold) {
    auto it = by_id.find(a.sentence());
    if (it == by_id.end()) throw NotFoundError("no prediction for annotated sentence " + a.sentence().str());
    ++g.total[index_of(a.task)];
    if ((*it->second)[a.task] == a.label) ++g.correct[index_of(a.task)];
  }
  double sum = 0.0;
  std::size_t tasks = 0;
  for (TaskId t : kAllTasks) {
    if (auto acc = g.task(t)) {
      sum += *acc;
      ++tasks;
    }
  }
  g.macro = tasks == 0 ? 0.0 : sum / static_cast<double>(tasks);
  return g;
}

std::string render_gold_comparison(std::span<const SystemAccuracy> systems) {
  std::ostringstream out;
  if (systems.empty()) return "";
  const auto& base = systems.front();
  out << "Gold accuracy (%) of " << base.name << "; other columns: difference from " << base.name
      << " in points\n";
  out << pad("Task", 28) << lpad(base.name, 14);
  for (std::size_t s = 1; s < systems.size(); ++s) out << lpad(systems[s].name, 16);
  out << "\n";
  for (TaskId t : kAllTasks) {
    auto b = base.accuracy.task(t);
    if (!b) continue;
    out << pad(std::string(task_name(t)), 28) << lpad(fmt("%.1f", 100.0 * *b), 14);
    for (std::size_t s = 1; s < systems.size(); ++s) {
      auto a = systems[s].accuracy.task(t);
      out << lpad(a ? fmt("%+.1f", 100.0 * (*a - *b)) : std::string("n/a"), 16);
    }
    out << "\n";
  }
  out << pad("macro average", 28) << lpad(fmt("%.1f", 100.0 * base.accuracy.macro), 14);
  for (std::size_t s = 1; s < systems.size(); ++s) {
    out << lpad(fmt("%+.1f", 100.0 * (systems[s].accuracy.macro - base.accuracy.macro)), 16);
  }
  out << "\n";
  for (const auto& s : systems) out << "average accuracy of " << s.name << ": " << fmt("%.1f", 100.0 * s.accuracy.macro) << "%\n";
  return out.str();
}

json gold_comparison_json(std::span<const SystemAccuracy> systems) {
  json out = json::array();
  for (const auto& s : systems) out.push_back({{"system", s.name}, {"accuracy", to_json(s.accuracy)}});
  return json{{"schema", "gold_comparison"}, {"schema_version", kReportSchemaVersion}, {"systems", out}};
}

json to_json(const AgreementReport& r) {
  json j{{"schema", "agreement"},
         {"schema_version", kReportSchemaVersion},
         {"shared_pairs", r.shared_pairs},
         {"agreeing_pairs", r.agreeing_pairs},
         {"rate", r.rate}};
  if (r.a_vs_labels) j["a_vs_labels"] = *r.a_vs_labels;
  if (r.b_vs_labels) j["b_vs_labels"] = *r.b_vs_labels;
  return j;
}

AgreementReport agreement(std::span<const AnnotationRecord> a, std::span<const AnnotationRecord> b,
                          std::span<const LabelRecord> labels) {
  using Pair = std::pair<std::string, TaskId>;
  auto index = [](std::span<const AnnotationRecord> set) {
    std::map<Pair, const AnnotationRecord*> m;
    for (const auto& r : set) m.emplace(Pair{r.dedup_key, r.task}, &r);
    return m;
  };
  const auto ia = index(a);
  const auto ib = index(b);
  AgreementReport out;
  for (const auto& [pair, ra] : ia) {
    auto it = ib.find(pair);
    if (it == ib.end()) continue;
    ++out.shared_pairs;
    if (ra->label == it->second->label) ++out.agreeing_pairs;
  }
  if (out.shared_pairs == 0) throw PreconditionError("annotation sets share no (sentence, task) pair");
  out.rate = ratio(out.agreeing_pairs, out.shared_pairs);
  if (!labels.empty()) {
    out.a_vs_labels = gold_accuracy(a, labels).macro;
    out.b_vs_labels = gold_accuracy(b, labels).macro;
  }
  return out;
}

json to_json(const BenchRecord& r) {
  return json{{"schema", "bench"},
              {"schema_version", kReportSchemaVersion},
              {"sentences", r.sentences},
              {"parallelism", r.parallelism},
              {"teacher", {{"seconds", r.teacher_seconds}, {"sentences_per_second", r.teacher_sentences_per_second}}},
              {"student", {{"seconds", r.student_seconds}, {"sentences_per_second", r.student_sentences_per_second}}},
              {"speedup", r.speedup}};
}

BenchRecord bench(std::span<const SentenceRecord> corpus, const CompiledRuleSet& rules, const Surrogate& student,
                  std::size_t parallelism, std::size_t batch_size) {
  if (corpus.empty()) throw PreconditionError("bench needs a non-empty corpus");
  BenchRecord r;
  r.sentences = corpus.size();
  r.parallelism = parallelism;
  LabelingStats teacher;
  classify_corpus(corpus, rules, parallelism, &teacher);
  const auto student_run = predict_corpus(corpus, student, batch_size, parallelism);
  r.teacher_seconds = teacher.seconds;
  r.teacher_sentences_per_second = teacher.sentences_per_second;
  r.student_seconds = student_run.stats.seconds;
  r.student_sentences_per_second = student_run.stats.sentences_per_second;
  r.speedup = r.student_sentences_per_second / r.teacher_sentences_per_second;
  return r;
}

json queue_items_json(const AdjudicationQueue& q) {
  json items = json::array();
  for (const auto& e : q.items) {
    items.push_back({{"blinding_id", e.blinding_id},
                     {"report_id", e.report_id},
                     {"sentence_index", e.sentence_index},
                     {"dedup_key", e.dedup_key},
                     {"text", e.text},
                     {"task", task_name(e.task)},
                     {"label_a", class_name(e.label_a)},
                     {"label_b", class_name(e.label_b)}});
  }
  return items;
}

json unblinding_json(const AdjudicationQueue& q) {
  json m = json::object();
  for (const auto& [id, src] : q.a_source) m[id] = src == LabelSource::reference ? "reference" : "prediction";
  return json{{"a_source", m}};
}

AdjudicationQueue queue_from_json(const json& items, const json& unblinding) {
  AdjudicationQueue q;
  try {
    for (const auto& j : items) {
      QueueEntry e;
      e.blinding_id = j.at("blinding_id").get<std::string>();
      e.report_id = j.at("report_id").get<std::string>();
      e.sentence_index = j.at("sentence_index").get<std::int64_t>();
      e.dedup_key = j.value("dedup_key", "");
      e.text = j.value("text", "");
      e.task = task_from_name(j.at("task").get<std::string>());
      e.label_a = class_from_name(j.at("label_a").get<std::string>());
      e.label_b = class_from_name(j.at("label_b").get<std::string>());
      q.items.push_back(std::move(e));
    }
    if (!unblinding.is_null()) {
      for (const auto& [id, src] : unblinding.at("a_source").items()) {
        q.a_source[id] = src.get<std::string>() == "reference" ? LabelSource::reference : LabelSource::prediction;
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("adjudication queue: ") + e.what());
  }
  return q;
}

AdjudicationQueue discrepancy_sample(std::span<const LabelRecord> reference, std::span<const LabelRecord> prediction,
                                     std::size_t per_task_cap, std::uint64_t seed,
                                     std::span<const SentenceRecord> corpus) {
  check_aligned(reference, prediction);
  std::unordered_map<SentenceId, const SentenceRecord*> text_of;
  for (const auto& s : corpus) text_of.emplace(s.id(), &s);
  Rng rng(seed);
  AdjudicationQueue q;
  std::size_t next_id = 0;
  for (TaskId t : kAllTasks) {
    std::vector<std::size_t> discrepant;
    for (std::size_t i = 0; i < reference.size(); ++i) {
      if (reference[i].labels[t] != prediction[i].labels[t]) discrepant.push_back(i);
    }
    rng.shuffle(discrepant);
    discrepant.resize(std::min(per_task_cap, discrepant.size()));
    std::sort(discrepant.begin(), discrepant.end());
    for (auto i : discrepant) {
      QueueEntry e;
      char id[32];
      std::snprintf(id, sizeof id, "adj-%06zu", next_id++);
      e.blinding_id = id;
      e.report_id = reference[i].report_id;
      e.sentence_index = reference[i].sentence_index;
      if (auto it = text_of.find(reference[i].id()); it != text_of.end()) {
        e.text = it->second->text;
        e.dedup_key = it->second->dedup_key;
      }
      e.task = t;
      const bool reference_first = rng.bernoulli(0.5);
      e.label_a = reference_first ? reference[i].labels[t] : prediction[i].labels[t];
      e.label_b = reference_first ? prediction[i].labels[t] : reference[i].labels[t];
      q.a_source[e.blinding_id] = reference_first ? LabelSource::reference : LabelSource::prediction;
      q.items.push_back(std::move(e));
    }
  }
  return q;
}

std::array<AdjudicationTally, kNumTasks + 1> tally_adjudications(const AdjudicationQueue& queue,
                                                                  std::span<const AdjudicationRecord> verdicts) {
  std::array<AdjudicationTally, kNumTasks + 1> out{};
  for (const auto& v : verdicts) {
    auto src = queue.a_source.find(v.blinding_id);
    if (src == queue.a_source.end()) throw NotFoundError("no unblinding entry for '" + v.blinding_id + "'");
    for (auto* tally : {&out[index_of(v.task)], &out[kNumTasks]}) {
      ++tally->n;
      switch (v.verdict) {
        case Verdict::prefer_a:
          ++(src->second == LabelSource::reference ? tally->prefer_reference : tally->prefer_prediction);
          break;
        case Verdict::prefer_b:
          ++(src->second == LabelSource::reference ? tally->prefer_prediction : tally->prefer_reference);
          break;
        case Verdict::both_wrong:
          ++tally->both_wrong;
          break;
        case Verdict::unsure:
          ++tally->unsure;
          break;
      }
    }
  }
  return out;
}

}  // namespace silverloop
