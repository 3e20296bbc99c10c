#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "silverloop/annotations.hpp"
#include "silverloop/core.hpp"
#include "silverloop/eval.hpp"
#include "silverloop/surrogate.hpp"

namespace silverloop {

// Nats. Throws ValidationError unless entries are >= 0 and sum to 1 within 1e-6.
double entropy(std::span<const double> probs);
// p(top1) - p(top2); same preconditions.
double margin(std::span<const double> probs);

enum class UncertaintyMeasure { entropy, margin };
UncertaintyMeasure parse_measure(std::string_view name);

// Larger is more uncertain. Margin is mapped to 1 - margin.
double uncertainty(std::span<const double> probs, UncertaintyMeasure measure);

struct Candidate {
  std::string dedup_key;
  std::string report_id;
  std::int64_t sentence_index = 0;
  std::string text;
  ProbabilityTable probs;
};

// Joins probability records with the corpus by (report_id, sentence_index).
std::vector<Candidate> join_candidates(std::span<const ProbabilityRecord> probs,
                                       std::span<const SentenceRecord> corpus);

struct SelectedItem {
  std::string dedup_key;
  std::string report_id;
  std::int64_t sentence_index = 0;
  std::string text;
  std::vector<TaskId> tasks;  // every task that requested the sentence
};

void to_json(json& j, const SelectedItem& s);
void from_json(const json& j, SelectedItem& s);

struct Selection {
  std::vector<SelectedItem> items;
  std::array<std::size_t, kNumTasks> per_task{};

  std::size_t requests() const;
};

// Per task: rank by uncertainty descending, ties by dedup_key ascending; skip
// excluded and already-taken keys; keep k. Items are the union over tasks in
// order of first request.
Selection select_uncertain(std::span<const Candidate> candidates, std::size_t k_per_task,
                           const std::unordered_set<std::string>& exclude = {},
                           UncertaintyMeasure measure = UncertaintyMeasure::entropy);

struct HeldoutItem {
  std::string dedup_key;
  std::string report_id;
  std::int64_t sentence_index = 0;
  std::string text;
  TaskId task = TaskId::no_finding;
  MentionClass teacher_label = MentionClass::negative;
};

void to_json(json& j, const HeldoutItem& h);
void from_json(const json& j, HeldoutItem& h);

struct Shortfall {
  TaskId task = TaskId::no_finding;
  MentionClass label = MentionClass::negative;
  std::size_t requested = 0;
  std::size_t available = 0;
};

struct HeldoutPlan {
  std::vector<HeldoutItem> items;
  std::vector<Shortfall> shortfalls;

  std::unordered_set<std::string> keys() const;
};

json to_json(const HeldoutPlan& plan);

// One cell per valid (task, label) pair, 54 in all. Each cell samples per_cell
// distinct dedup_keys whose teacher label matches, without replacement.
HeldoutPlan build_heldout(std::span<const LabelRecord> teacher, std::span<const SentenceRecord> corpus,
                          std::size_t per_cell = 10, std::uint64_t seed = 1);

// Validates and durably appends. Throws InvalidLabelError or DuplicateError.
void record_annotation(AnnotationStore& store, AnnotationRecord record);

// Writes one annotation per (item, requesting task) taking the label from
// `oracle`. Pairs already in the store are skipped; returns the number written.
std::size_t oracle_annotate(const Selection& selection, std::span<const LabelRecord> oracle, AnnotationStore& store,
                            const std::string& annotator,
                            AnnotationSource source = AnnotationSource::active_round);
std::size_t oracle_annotate(std::span<const HeldoutItem> items, std::span<const LabelRecord> oracle,
                            AnnotationStore& store, const std::string& annotator);

// Groups annotations of one source into training examples, one per dedup_key.
// The first label recorded for a (key, task) wins.
std::vector<Example> annotation_examples(std::span<const AnnotationRecord> annotations,
                                         std::span<const SentenceRecord> corpus, AnnotationSource source);

struct RoundConfig {
  TrainConfig train = [] {
    TrainConfig c;
    c.epochs = 1;
    c.batch_size = 16;
    c.learning_rate = 1e-2;
    return c;
  }();
  double mix_teacher = 0.0;
  std::size_t batch_size = 256;  // prediction batch
};

struct RoundResult {
  Checkpoint checkpoint;
  std::size_t training_examples = 0;
  std::size_t training_pairs = 0;
  // teacher, student-raw, student-post on held-out gold
  std::vector<SystemAccuracy> comparison;
};

// Throws PreconditionError when run_round would refuse these annotations.
void check_round_preconditions(std::span<const AnnotationRecord> annotations);

// Fine-tunes on active_round annotations only. Throws PreconditionError when
// there are no active_round or no held-out annotations, and when any training
// key is also a held-out key.
RoundResult run_round(std::span<const LabelRecord> teacher, const Checkpoint& start,
                      std::span<const AnnotationRecord> annotations, std::span<const SentenceRecord> corpus,
                      const RoundConfig& config = {});

}  // namespace silverloop
