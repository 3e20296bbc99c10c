#include "silverloop/active.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_map>

#include "silverloop/error.hpp"

namespace silverloop {
namespace {

void check_distribution(std::span<const double> p) {
  if (p.empty()) throw ValidationError("probability vector is empty");
  double sum = 0.0;
  for (double x : p) {
    if (!(x >= 0.0)) throw ValidationError("probability entries must be >= 0");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw ValidationError("probabilities sum to " + std::to_string(sum) + ", not 1");
}

std::unordered_map<SentenceId, const SentenceRecord*> by_id(std::span<const SentenceRecord> corpus) {
  std::unordered_map<SentenceId, const SentenceRecord*> m;
  for (const auto& s : corpus) m.emplace(s.id(), &s);
  return m;
}

}  // namespace

double entropy(std::span<const double> probs) {
  check_distribution(probs);
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::max(h, 0.0);
}

double margin(std::span<const double> probs) {
  check_distribution(probs);
  if (probs.size() < 2) return 1.0;
  double a = -1.0;
  double b = -1.0;
  for (double p : probs) {
    if (p > a) {
      b = a;
      a = p;
    } else if (p > b) {
      b = p;
    }
  }
  return a - b;
}

UncertaintyMeasure parse_measure(std::string_view name) {
  if (name == "entropy") return UncertaintyMeasure::entropy;
  if (name == "margin") return UncertaintyMeasure::margin;
  throw ValidationError("unknown uncertainty measure '" + std::string(name) + "' (expected entropy or margin)");
}

double uncertainty(std::span<const double> probs, UncertaintyMeasure measure) {
  return measure == UncertaintyMeasure::entropy ? entropy(probs) : 1.0 - margin(probs);
}

std::vector<Candidate> join_candidates(std::span<const ProbabilityRecord> probs,
                                       std::span<const SentenceRecord> corpus) {
  const auto index = by_id(corpus);
  std::vector<Candidate> out;
  out.reserve(probs.size());
  for (const auto& p : probs) {
    auto it = index.find({p.report_id, p.sentence_index});
    if (it == index.end()) {
      throw NotFoundError("probabilities for " + SentenceId{p.report_id, p.sentence_index}.str() +
                          " have no corpus sentence");
    }
    out.push_back({it->second->dedup_key, p.report_id, p.sentence_index, it->second->text, p.probs});
  }
  return out;
}

void to_json(json& j, const SelectedItem& s) {
  json tasks = json::array();
  for (TaskId t : s.tasks) tasks.push_back(task_name(t));
  j = json{{"dedup_key", s.dedup_key},
           {"report_id", s.report_id},
           {"sentence_index", s.sentence_index},
           {"text", s.text},
           {"tasks", tasks}};
}

void from_json(const json& j, SelectedItem& s) {
  s.dedup_key = j.at("dedup_key").get<std::string>();
  s.report_id = j.at("report_id").get<std::string>();
  s.sentence_index = j.at("sentence_index").get<std::int64_t>();
  s.text = j.value("text", "");
  s.tasks.clear();
  for (const auto& t : j.at("tasks")) s.tasks.push_back(task_from_name(t.get<std::string>()));
}

std::size_t Selection::requests() const {
  return std::accumulate(per_task.begin(), per_task.end(), std::size_t{0});
}

Selection select_uncertain(std::span<const Candidate> candidates, std::size_t k_per_task,
                           const std::unordered_set<std::string>& exclude, UncertaintyMeasure measure) {
  Selection out;
  if (k_per_task == 0) return out;
  std::unordered_map<std::string, std::size_t> item_of;
  std::vector<std::pair<double, std::size_t>> ranked(candidates.size());
  for (TaskId t : kAllTasks) {
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      ranked[i] = {uncertainty(candidates[i].probs[index_of(t)], measure), i};
    }
    std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      const auto& ka = candidates[a.second].dedup_key;
      const auto& kb = candidates[b.second].dedup_key;
      if (ka != kb) return ka < kb;
      return a.second < b.second;
    });
    std::unordered_set<std::string> taken;
    for (const auto& [score, i] : ranked) {
      if (taken.size() == k_per_task) break;
      const auto& c = candidates[i];
      if (exclude.count(c.dedup_key) || !taken.insert(c.dedup_key).second) continue;
      auto [it, fresh] = item_of.emplace(c.dedup_key, out.items.size());
      if (fresh) out.items.push_back({c.dedup_key, c.report_id, c.sentence_index, c.text, {}});
      out.items[it->second].tasks.push_back(t);
    }
    out.per_task[index_of(t)] = taken.size();
  }
  return out;
}

void to_json(json& j, const HeldoutItem& h) {
  j = json{{"dedup_key", h.dedup_key},
           {"report_id", h.report_id},
           {"sentence_index", h.sentence_index},
           {"text", h.text},
           {"task", task_name(h.task)},
           {"teacher_label", class_name(h.teacher_label)}};
}

void from_json(const json& j, HeldoutItem& h) {
  h.dedup_key = j.at("dedup_key").get<std::string>();
  h.report_id = j.at("report_id").get<std::string>();
  h.sentence_index = j.at("sentence_index").get<std::int64_t>();
  h.text = j.value("text", "");
  h.task = task_from_name(j.at("task").get<std::string>());
  h.teacher_label = class_from_name(j.at("teacher_label").get<std::string>());
}

std::unordered_set<std::string> HeldoutPlan::keys() const {
  std::unordered_set<std::string> out;
  for (const auto& i : items) out.insert(i.dedup_key);
  return out;
}

json to_json(const HeldoutPlan& plan) {
  json shortfalls = json::array();
  for (const auto& s : plan.shortfalls) {
    shortfalls.push_back({{"task", task_name(s.task)},
                          {"label", class_name(s.label)},
                          {"requested", s.requested},
                          {"available", s.available}});
  }
  return json{{"items", plan.items.size()}, {"shortfalls", shortfalls}};
}

HeldoutPlan build_heldout(std::span<const LabelRecord> teacher, std::span<const SentenceRecord> corpus,
                          std::size_t per_cell, std::uint64_t seed) {
  const auto index = by_id(corpus);
  // first occurrence of each dedup_key, in file order
  std::vector<std::pair<const SentenceRecord*, const LabelVector*>> pool;
  std::unordered_set<std::string> seen;
  for (const auto& l : teacher) {
    auto it = index.find(l.id());
    if (it == index.end()) throw NotFoundError("label for " + l.id().str() + " has no corpus sentence");
    if (seen.insert(it->second->dedup_key).second) pool.emplace_back(it->second, &l.labels);
  }
  Rng rng(seed);
  HeldoutPlan plan;
  for (TaskId t : kAllTasks) {
    for (MentionClass c : kAllClasses) {
      if (!is_valid_for(t, c)) continue;
      std::vector<std::size_t> cell;
      for (std::size_t i = 0; i < pool.size(); ++i) {
        if ((*pool[i].second)[t] == c) cell.push_back(i);
      }
      rng.shuffle(cell);
      if (cell.size() < per_cell) plan.shortfalls.push_back({t, c, per_cell, cell.size()});
      cell.resize(std::min(cell.size(), per_cell));
      for (auto i : cell) {
        const auto& s = *pool[i].first;
        plan.items.push_back({s.dedup_key, s.report_id, s.sentence_index, s.text, t, c});
      }
    }
  }
  return plan;
}

void record_annotation(AnnotationStore& store, AnnotationRecord record) { store.append(std::move(record)); }

std::size_t oracle_annotate(const Selection& selection, std::span<const LabelRecord> oracle, AnnotationStore& store,
                            const std::string& annotator, AnnotationSource source) {
  std::unordered_map<SentenceId, const LabelVector*> gold;
  for (const auto& l : oracle) gold.emplace(l.id(), &l.labels);
  std::size_t written = 0;
  for (const auto& item : selection.items) {
    auto it = gold.find({item.report_id, item.sentence_index});
    if (it == gold.end()) {
      throw NotFoundError("oracle has no label for " + SentenceId{item.report_id, item.sentence_index}.str());
    }
    for (TaskId t : item.tasks) {
      if (store.contains(item.dedup_key, t, annotator, source)) continue;
      record_annotation(store, {item.dedup_key, item.report_id, item.sentence_index, t, (*it->second)[t], annotator,
                                "", source});
      ++written;
    }
  }
  return written;
}

std::size_t oracle_annotate(std::span<const HeldoutItem> items, std::span<const LabelRecord> oracle,
                            AnnotationStore& store, const std::string& annotator) {
  std::unordered_map<SentenceId, const LabelVector*> gold;
  for (const auto& l : oracle) gold.emplace(l.id(), &l.labels);
  std::size_t written = 0;
  for (const auto& item : items) {
    auto it = gold.find({item.report_id, item.sentence_index});
    if (it == gold.end()) {
      throw NotFoundError("oracle has no label for " + SentenceId{item.report_id, item.sentence_index}.str());
    }
    if (store.contains(item.dedup_key, item.task, annotator, AnnotationSource::heldout)) continue;
    record_annotation(store, {item.dedup_key, item.report_id, item.sentence_index, item.task,
                              (*it->second)[item.task], annotator, "", AnnotationSource::heldout});
    ++written;
  }
  return written;
}

std::vector<Example> annotation_examples(std::span<const AnnotationRecord> annotations,
                                         std::span<const SentenceRecord> corpus, AnnotationSource source) {
  const auto index = by_id(corpus);
  std::vector<Example> out;
  std::unordered_map<std::string, std::size_t> slot;
  for (const auto& a : annotations) {
    if (a.source != source) continue;
    auto [it, fresh] = slot.emplace(a.dedup_key, out.size());
    if (fresh) {
      auto s = index.find(a.sentence());
      if (s == index.end()) throw NotFoundError("annotated sentence " + a.sentence().str() + " is not in the corpus");
      out.push_back({s->second->text, {}});
    }
    auto& labels = out[it->second].labels;
    if (!labels[a.task]) labels.set(a.task, a.label);
  }
  return out;
}

void check_round_preconditions(std::span<const AnnotationRecord> annotations) {
  std::unordered_set<std::string> heldout_keys;
  std::size_t active = 0;
  for (const auto& a : annotations) {
    if (a.source == AnnotationSource::heldout) heldout_keys.insert(a.dedup_key);
    if (a.source == AnnotationSource::active_round) ++active;
  }
  if (active == 0) throw PreconditionError("no active_round annotations to train on");
  if (heldout_keys.empty()) throw PreconditionError("no held-out annotations to evaluate against");
  for (const auto& a : annotations) {
    if (a.source == AnnotationSource::active_round && heldout_keys.count(a.dedup_key)) {
      throw PreconditionError("training key " + a.dedup_key + " (" + a.sentence().str() +
                              ") is also in the held-out set");
    }
  }
}

RoundResult run_round(std::span<const LabelRecord> teacher, const Checkpoint& start,
                      std::span<const AnnotationRecord> annotations, std::span<const SentenceRecord> corpus,
                      const RoundConfig& config) {
  check_round_preconditions(annotations);
  std::vector<AnnotationRecord> heldout;
  std::unordered_set<std::string> heldout_keys;
  for (const auto& a : annotations) {
    if (a.source != AnnotationSource::heldout) continue;
    heldout.push_back(a);
    heldout_keys.insert(a.dedup_key);
  }

  const auto examples = annotation_examples(annotations, corpus, AnnotationSource::active_round);

  std::vector<Example> teacher_examples;
  if (config.mix_teacher > 0) {
    const auto index = by_id(corpus);
    for (const auto& l : teacher) {
      auto s = index.find(l.id());
      if (s == index.end() || heldout_keys.count(s->second->dedup_key)) continue;
      teacher_examples.push_back({s->second->text, PartialLabelVector::from(l.labels)});
    }
  }
  RoundResult out{fine_tune(start, examples, config.train, teacher_examples, config.mix_teacher), examples.size(), 0, {}};
  for (const auto& e : examples) out.training_pairs += e.labels.size();

  std::unordered_set<SentenceId> wanted;
  for (const auto& a : heldout) wanted.insert(a.sentence());
  std::vector<SentenceRecord> eval_corpus;
  for (const auto& s : corpus) {
    if (wanted.count(s.id())) eval_corpus.push_back(s);
  }
  const auto raw = predict_corpus(eval_corpus, start.model, config.batch_size);
  const auto post = predict_corpus(eval_corpus, out.checkpoint.model, config.batch_size);
  out.comparison.push_back({"teacher", gold_accuracy(heldout, teacher)});
  out.comparison.push_back({"student_raw", gold_accuracy(heldout, raw.labels)});
  out.comparison.push_back({"student_post", gold_accuracy(heldout, post.labels)});
  return out;
}

}  // namespace silverloop
