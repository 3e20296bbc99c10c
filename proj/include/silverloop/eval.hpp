#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "silverloop/annotations.hpp"
#include "silverloop/core.hpp"
#include "silverloop/rule_labeler.hpp"
#include "silverloop/surrogate.hpp"

namespace silverloop {

// Metrics count in integers; floating point appears only in the final ratios.

inline constexpr int kReportSchemaVersion = 1;

// rows = reference class, columns = predicted class, canonical class order.
using ConfusionMatrix = std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses>;
using RatioMatrix = std::array<std::array<double, kNumClasses>, kNumClasses>;

// Restricts evaluation to sentences whose dedup_key is in `keys`.
struct KeyFilter {
  std::unordered_map<SentenceId, std::string> key_of;
  std::unordered_set<std::string> keys;

  static KeyFilter from(std::span<const SentenceRecord> corpus, std::span<const std::string> keys);
  bool admits(const SentenceId& id) const;
};

struct ParityReport {
  std::uint64_t n_sentences = 0;
  std::uint64_t n_pairs = 0;
  std::uint64_t n_matches = 0;
  double overall_match = 1.0;     // pair weighted
  double task_macro_match = 1.0;  // unweighted mean over tasks
  std::array<std::uint64_t, kNumTasks> per_task_pairs{};
  std::array<double, kNumTasks> per_task_failure{};
  std::array<ConfusionMatrix, kNumTasks> confusion{};

  // Each non-empty row sums to 1.
  RatioMatrix row_normalized(TaskId t) const;
  // log10(1 + count).
  RatioMatrix log_scaled(TaskId t) const;
};

json to_json(const ParityReport& r);

// Throws MisalignedError naming the first (report_id, sentence_index) mismatch.
ParityReport parity(std::span<const LabelRecord> reference, std::span<const LabelRecord> prediction,
                    const KeyFilter* restrict_to = nullptr);

// failure = 1 - frequency of the most frequent class (ties: lowest ordinal).
std::array<double, kNumTasks> majority_baseline(std::span<const LabelRecord> reference);

// Per-task failure table: majority baseline next to the system, in percent.
std::string render_failure_table(const ParityReport& report, const std::array<double, kNumTasks>& baseline);
// Raw, log-scale and row-normalised matrices for every task.
std::string render_confusion(const ParityReport& report);

struct F1Counts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  // 2PR / (P + R), 0 when undefined.
  double f1() const;
  F1Counts& operator+=(const F1Counts& o);
};

enum class F1Kind { mention, negation, uncertainty };
inline constexpr std::array<F1Kind, 3> kAllF1Kinds = {F1Kind::mention, F1Kind::negation, F1Kind::uncertainty};
std::string_view f1_kind_name(F1Kind k);

// Mention: {negative, uncertain, positive} vs no_mention. Negation: negative.
// Uncertainty: uncertain. no_finding is excluded (it has no no_mention class).
struct F1Report {
  std::array<std::array<F1Counts, 3>, kNumTasks> per_task{};
  std::array<F1Counts, 3> micro{};

  double task_f1(TaskId t, F1Kind k) const { return per_task[index_of(t)][static_cast<std::size_t>(k)].f1(); }
  double micro_f1(F1Kind k) const { return micro[static_cast<std::size_t>(k)].f1(); }
};

json to_json(const F1Report& r);

F1Report f1(std::span<const LabelRecord> reference, std::span<const LabelRecord> prediction);

struct GoldAccuracy {
  std::array<std::uint64_t, kNumTasks> correct{};
  std::array<std::uint64_t, kNumTasks> total{};
  // Mean over tasks with at least one annotation.
  double macro = 0.0;

  std::optional<double> task(TaskId t) const;
};

json to_json(const GoldAccuracy& g);

// Scores only annotated (sentence, task) pairs. Throws NotFoundError when an
// annotated sentence has no prediction.
GoldAccuracy gold_accuracy(std::span<const AnnotationRecord> gold, std::span<const LabelRecord> prediction);

struct SystemAccuracy {
  std::string name;
  GoldAccuracy accuracy;
};

// Accuracy per task for the baseline (first entry) and every other system's
// difference from it, in percentage points.
std::string render_gold_comparison(std::span<const SystemAccuracy> systems);
json gold_comparison_json(std::span<const SystemAccuracy> systems);

struct AgreementReport {
  std::size_t shared_pairs = 0;
  std::size_t agreeing_pairs = 0;
  double rate = 0.0;
  std::optional<double> a_vs_labels;
  std::optional<double> b_vs_labels;
};

json to_json(const AgreementReport& r);

// Agreement on shared (dedup_key, task) pairs; each annotator's first record
// for a pair counts. Throws PreconditionError on an empty intersection.
AgreementReport agreement(std::span<const AnnotationRecord> a, std::span<const AnnotationRecord> b,
                          std::span<const LabelRecord> labels = {});

struct BenchRecord {
  std::size_t sentences = 0;
  std::size_t parallelism = 1;
  double teacher_seconds = 0.0;
  double teacher_sentences_per_second = 0.0;
  double student_seconds = 0.0;
  double student_sentences_per_second = 0.0;
  // student throughput / teacher throughput
  double speedup = 0.0;
};

json to_json(const BenchRecord& r);

BenchRecord bench(std::span<const SentenceRecord> corpus, const CompiledRuleSet& rules, const Surrogate& student,
                  std::size_t parallelism, std::size_t batch_size = 64);

struct QueueEntry {
  std::string blinding_id;
  std::string report_id;
  std::int64_t sentence_index = 0;
  std::string dedup_key;
  std::string text;
  TaskId task = TaskId::no_finding;
  MentionClass label_a = MentionClass::no_mention;
  MentionClass label_b = MentionClass::no_mention;
};

enum class LabelSource { reference, prediction };

struct AdjudicationQueue {
  std::vector<QueueEntry> items;
  // blinding_id -> source shown as label A. Kept apart from the items.
  std::map<std::string, LabelSource> a_source;
};

json queue_items_json(const AdjudicationQueue& q);
json unblinding_json(const AdjudicationQueue& q);
AdjudicationQueue queue_from_json(const json& items, const json& unblinding);

// Per task, samples min(cap, #discrepancies) discrepant sentences uniformly
// and assigns the two labels to A/B by a seeded coin flip. `corpus` supplies
// text and dedup keys when non-empty.
AdjudicationQueue discrepancy_sample(std::span<const LabelRecord> reference, std::span<const LabelRecord> prediction,
                                     std::size_t per_task_cap, std::uint64_t seed,
                                     std::span<const SentenceRecord> corpus = {});

struct AdjudicationTally {
  std::size_t n = 0;
  std::size_t prefer_reference = 0;
  std::size_t prefer_prediction = 0;
  std::size_t both_wrong = 0;
  std::size_t unsure = 0;
};

// Unblinds verdicts and tallies them per task plus a micro total (last entry).
std::array<AdjudicationTally, kNumTasks + 1> tally_adjudications(const AdjudicationQueue& queue,
                                                                  std::span<const AdjudicationRecord> verdicts);

}  // namespace silverloop
