#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "silverloop/core.hpp"
#include "silverloop/io.hpp"

namespace silverloop {

struct HasherConfig {
  std::uint32_t n_buckets = 1u << 18;
  std::uint64_t seed = 0x9e3779b97f4a7c15ULL;
  friend bool operator==(const HasherConfig&, const HasherConfig&) = default;
};

// Unigrams and bigrams over tokenize() output, hashed into n_buckets.
class FeatureHasher {
 public:
  explicit FeatureHasher(HasherConfig config = {});

  // Unigram buckets in token order followed by bigram buckets; repeats kept.
  std::vector<std::uint32_t> features(std::string_view text) const;
  const HasherConfig& config() const { return config_; }

 private:
  HasherConfig config_;
};

struct ModelShape {
  std::uint32_t n_buckets = 1u << 18;
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 128;
  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

// Offset of each task's head inside the concatenated output layer.
std::size_t head_offset(TaskId t);
inline constexpr std::size_t kNumOutputs = 13 * 4 + 2;

// Flat parameter store, blocks in order:
//   embedding   [n_buckets x embed_dim]
//   hidden_w    [embed_dim x hidden_dim]
//   hidden_b    [hidden_dim]
//   head_w      [hidden_dim x kNumOutputs]
//   head_b      [kNumOutputs]
// Values always lie on the float32 grid so checkpoints are exact.
class ModelParams {
 public:
  explicit ModelParams(ModelShape shape);

  // Weights uniform(-scale, scale), biases zero.
  static ModelParams random(ModelShape shape, std::uint64_t seed, double scale = 0.05);

  const ModelShape& shape() const { return shape_; }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  std::size_t embedding_offset() const { return 0; }
  std::size_t hidden_w_offset() const { return embedding_size(); }
  std::size_t hidden_b_offset() const { return hidden_w_offset() + shape_.embed_dim * shape_.hidden_dim; }
  std::size_t head_w_offset() const { return hidden_b_offset() + shape_.hidden_dim; }
  std::size_t head_b_offset() const { return head_w_offset() + shape_.hidden_dim * kNumOutputs; }
  std::size_t embedding_size() const { return std::size_t{shape_.n_buckets} * shape_.embed_dim; }
  std::size_t dense_size() const { return data_.size() - embedding_size(); }
  std::size_t size() const { return data_.size(); }

  const double* embedding_row(std::uint32_t bucket) const { return data_.data() + std::size_t{bucket} * shape_.embed_dim; }

  bool all_finite() const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;

 private:
  ModelShape shape_;
  std::vector<double> data_;
};

// Each task's distribution over its valid classes in ordinal order
// (no_finding: [negative, positive]).
using ProbabilityTable = std::array<std::vector<double>, kNumTasks>;

// Argmax per task; ties go to the lowest class ordinal.
LabelVector argmax_labels(const ProbabilityTable& probs);

struct Example {
  std::string text;
  PartialLabelVector labels;
};

struct EncodedExample {
  std::vector<std::uint32_t> features;
  PartialLabelVector labels;
};

// Loss plus its gradient. Embedding gradients are kept per touched row;
// `dense` covers every parameter after the embedding block.
struct Gradients {
  double loss = 0.0;
  std::size_t pairs = 0;
  std::map<std::uint32_t, std::vector<double>> embedding_rows;
  std::vector<double> dense;

  // Gradient for a flat parameter index (zero for untouched rows).
  double at(const ModelParams& params, std::size_t flat_index) const;
};

class Surrogate {
 public:
  Surrogate(HasherConfig hasher, ModelParams params);

  const FeatureHasher& hasher() const { return hasher_; }
  const ModelParams& params() const { return params_; }
  ModelParams& mutable_params() { return params_; }

  // Mean of hashed-feature embedding rows -> tanh hidden layer -> per-task softmax.
  ProbabilityTable forward(std::string_view text) const;
  ProbabilityTable forward_features(std::span<const std::uint32_t> features) const;
  LabelVector predict(std::string_view text) const { return argmax_labels(forward(text)); }

  EncodedExample encode(const Example& e) const { return {hasher_.features(e.text), e.labels}; }

 private:
  FeatureHasher hasher_;
  ModelParams params_;
};

// Mean cross-entropy over every (example, labeled task) pair. Throws
// PreconditionError for an empty batch or an example with no labels.
double loss(std::span<const Example> batch, const Surrogate& model);
Gradients backward(std::span<const Example> batch, const Surrogate& model);
Gradients backward_encoded(std::span<const EncodedExample* const> batch, const Surrogate& model);

struct TrainConfig {
  static constexpr double kReferenceLearningRate = 5e-5;

  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  double learning_rate = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 1;
  bool shuffle = true;

  void validate() const;
};

struct ModelConfig {
  HasherConfig hasher;
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 128;
  double init_scale = 0.05;
};

struct TrainingMetadata {
  std::size_t epochs_seen = 0;
  std::uint64_t steps = 0;
  std::string data_fingerprint;
  friend bool operator==(const TrainingMetadata&, const TrainingMetadata&) = default;
};

struct Checkpoint {
  static constexpr int kVersion = 1;
  Surrogate model;
  TrainingMetadata metadata;
};

json checkpoint_to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const json& j);
void save_checkpoint(const fs::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const fs::path& path);

// Order-sensitive hash of texts and labels, hex encoded.
std::string data_fingerprint(std::span<const Example> data);

// Adam with lazy embedding updates: only rows present in a step's gradient
// have their moments and values touched. Bias correction uses the global step.
class AdamOptimizer {
 public:
  AdamOptimizer(const ModelParams& params, const TrainConfig& config);
  void step(ModelParams& params, const Gradients& grads);
  std::uint64_t steps() const { return t_; }

 private:
  TrainConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::uint64_t t_ = 0;
};

struct ValidationSet {
  std::vector<std::string> texts;
  std::vector<LabelVector> reference;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> validation_parity;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> log;
};

// Single-writer sequential optimisation over a fixed (seeded) batch order.
class Trainer {
 public:
  Trainer(Checkpoint start, TrainConfig config);

  // One optimisation step. Throws NumericError on a non-finite loss.
  double step(std::span<const EncodedExample* const> batch, std::size_t batch_index);
  // One pass over `data` in seeded order; returns the mean batch loss.
  double run_epoch(std::span<const EncodedExample> data);

  const Surrogate& model() const { return checkpoint_.model; }
  Checkpoint checkpoint() const { return checkpoint_; }
  void set_fingerprint(std::string fp) { checkpoint_.metadata.data_fingerprint = std::move(fp); }

 private:
  Checkpoint checkpoint_;
  TrainConfig config_;
  AdamOptimizer optimizer_;
  Rng rng_;
};

Checkpoint initial_checkpoint(const ModelConfig& model, std::uint64_t seed);

// Throws PreconditionError on empty data.
TrainResult train(std::span<const Example> data, const TrainConfig& config, const ModelConfig& model,
                  const Checkpoint* init = nullptr, const ValidationSet* validation = nullptr);

// Continues from `start` over annotations with the masked loss. When
// mix_teacher > 0, round(mix_teacher * |annotations|) examples drawn from
// `teacher` are mixed in.
Checkpoint fine_tune(const Checkpoint& start, std::span<const Example> annotations, const TrainConfig& config,
                     std::span<const Example> teacher = {}, double mix_teacher = 0.0);

struct ProbabilityRecord {
  std::string report_id;
  std::int64_t sentence_index = 0;
  ProbabilityTable probs;
};

void to_json(json& j, const ProbabilityRecord& r);
void from_json(const json& j, ProbabilityRecord& r);

struct PredictionStats {
  std::size_t sentences = 0;
  double seconds = 0.0;
  double sentences_per_second = 0.0;
};

struct Predictions {
  std::vector<LabelRecord> labels;
  std::vector<ProbabilityRecord> probabilities;
  PredictionStats stats;
};

Predictions predict_corpus(std::span<const SentenceRecord> corpus, const Surrogate& model, std::size_t batch_size,
                           std::size_t parallelism = 1);

}  // namespace silverloop
