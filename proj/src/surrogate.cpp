#include "silverloop/surrogate.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <thread>

#include <openssl/evp.h>

#include "silverloop/error.hpp"
#include "silverloop/rule_labeler.hpp"

namespace silverloop {
namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

std::uint64_t fnv1a(std::uint64_t h, std::string_view bytes) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

std::uint64_t mix(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

double to_float_grid(double x) { return static_cast<double>(static_cast<float>(x)); }

constexpr std::array<std::size_t, kNumTasks> kHeadOffsets = [] {
  std::array<std::size_t, kNumTasks> offsets{};
  std::size_t off = 0;
  for (std::size_t i = 0; i < kNumTasks; ++i) {
    offsets[i] = off;
    off += num_classes(kAllTasks[i]);
  }
  return offsets;
}();

// Intermediate values of one forward pass, reused by backward.
struct Activations {
  std::vector<double> embedding;
  std::vector<double> hidden;
  std::array<double, kNumOutputs> probs{};
};

void forward_into(const ModelParams& p, std::span<const std::uint32_t> features, Activations& act) {
  const auto& s = p.shape();
  const auto v = p.values();
  act.embedding.assign(s.embed_dim, 0.0);
  if (!features.empty()) {
    for (auto f : features) {
      const double* row = p.embedding_row(f);
      for (std::size_t i = 0; i < s.embed_dim; ++i) act.embedding[i] += row[i];
    }
    const double inv = 1.0 / static_cast<double>(features.size());
    for (auto& x : act.embedding) x *= inv;
  }

  act.hidden.assign(v.begin() + static_cast<std::ptrdiff_t>(p.hidden_b_offset()),
                    v.begin() + static_cast<std::ptrdiff_t>(p.hidden_b_offset() + s.hidden_dim));
  const double* hw = v.data() + p.hidden_w_offset();
  for (std::size_t i = 0; i < s.embed_dim; ++i) {
    const double e = act.embedding[i];
    if (e == 0.0) continue;
    const double* row = hw + i * s.hidden_dim;
    for (std::size_t j = 0; j < s.hidden_dim; ++j) act.hidden[j] += e * row[j];
  }
  for (auto& h : act.hidden) h = std::tanh(h);

  std::array<double, kNumOutputs> logits{};
  std::copy_n(v.data() + p.head_b_offset(), kNumOutputs, logits.begin());
  const double* ow = v.data() + p.head_w_offset();
  for (std::size_t j = 0; j < s.hidden_dim; ++j) {
    const double a = act.hidden[j];
    const double* row = ow + j * kNumOutputs;
    for (std::size_t k = 0; k < kNumOutputs; ++k) logits[k] += a * row[k];
  }
  for (TaskId t : kAllTasks) {
    const std::size_t off = kHeadOffsets[index_of(t)];
    const std::size_t n = num_classes(t);
    const double mx = *std::max_element(logits.begin() + off, logits.begin() + off + n);
    double z = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      act.probs[off + k] = std::exp(logits[off + k] - mx);
      z += act.probs[off + k];
    }
    for (std::size_t k = 0; k < n; ++k) act.probs[off + k] /= z;
  }
}

ProbabilityTable to_table(const std::array<double, kNumOutputs>& probs) {
  ProbabilityTable out;
  for (TaskId t : kAllTasks) {
    const std::size_t off = kHeadOffsets[index_of(t)];
    out[index_of(t)].assign(probs.begin() + static_cast<std::ptrdiff_t>(off),
                            probs.begin() + static_cast<std::ptrdiff_t>(off + num_classes(t)));
  }
  return out;
}

void check_example(const PartialLabelVector& labels) {
  if (labels.empty()) throw PreconditionError("every example needs at least one labeled task");
  for (TaskId t : kAllTasks) {
    if (labels[t]) require_valid(t, *labels[t]);
  }
}

std::string encode_floats(std::span<const double> values) {
  std::vector<unsigned char> raw(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
    for (int b = 0; b < 4; ++b) raw[i * 4 + static_cast<std::size_t>(b)] = static_cast<unsigned char>(bits >> (8 * b));
  }
  std::string out(4 * ((raw.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), raw.data(), static_cast<int>(raw.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<double> decode_floats(const std::string& b64, std::size_t expected, const std::string& name) {
  if (b64.size() % 4 != 0) throw ParseError("checkpoint tensor '" + name + "': bad base64 length");
  std::vector<unsigned char> raw(b64.size() / 4 * 3 + 1);
  const int n = EVP_DecodeBlock(raw.data(), reinterpret_cast<const unsigned char*>(b64.data()), static_cast<int>(b64.size()));
  if (n < 0) throw ParseError("checkpoint tensor '" + name + "': invalid base64");
  std::size_t len = static_cast<std::size_t>(n);
  // EVP_DecodeBlock counts padding bytes as output.
  if (!b64.empty() && b64.back() == '=') --len;
  if (b64.size() >= 2 && b64[b64.size() - 2] == '=') --len;
  if (len != expected * 4) {
    throw ParseError("checkpoint tensor '" + name + "': expected " + std::to_string(expected) + " floats, got " +
                     std::to_string(len / 4));
  }
  std::vector<double> out(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= std::uint32_t{raw[i * 4 + static_cast<std::size_t>(b)]} << (8 * b);
    out[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return out;
}

}  // namespace

std::size_t head_offset(TaskId t) { return kHeadOffsets[index_of(t)]; }

FeatureHasher::FeatureHasher(HasherConfig config) : config_(config) {
  if (config_.n_buckets == 0 || !std::has_single_bit(config_.n_buckets)) {
    throw ValidationError("n_buckets must be a power of two, got " + std::to_string(config_.n_buckets));
  }
}

std::vector<std::uint32_t> FeatureHasher::features(std::string_view text) const {
  const auto tokens = tokenize(text);
  std::vector<std::uint32_t> out;
  out.reserve(tokens.size() * 2);
  const std::uint64_t mask = config_.n_buckets - 1;
  std::uint64_t base = kFnvOffset;
  for (int b = 0; b < 8; ++b) {
    base ^= (config_.seed >> (8 * b)) & 0xff;
    base *= kFnvPrime;
  }
  for (const auto& tok : tokens) out.push_back(static_cast<std::uint32_t>(mix(fnv1a(fnv1a(base, "1\x1f"), tok)) & mask));
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
    std::uint64_t h = fnv1a(fnv1a(fnv1a(base, "2\x1f"), tokens[i]), "\x1f");
    out.push_back(static_cast<std::uint32_t>(mix(fnv1a(h, tokens[i + 1])) & mask));
  }
  return out;
}

ModelParams::ModelParams(ModelShape shape) : shape_(shape) {
  if (shape_.n_buckets == 0 || shape_.embed_dim == 0 || shape_.hidden_dim == 0) {
    throw ValidationError("model dimensions must be positive");
  }
  data_.assign(embedding_size() + shape_.embed_dim * shape_.hidden_dim + shape_.hidden_dim +
                   shape_.hidden_dim * kNumOutputs + kNumOutputs,
               0.0);
}

ModelParams ModelParams::random(ModelShape shape, std::uint64_t seed, double scale) {
  ModelParams p(shape);
  Rng rng(seed);
  auto fill = [&](std::size_t begin, std::size_t count) {
    for (std::size_t i = begin; i < begin + count; ++i) p.data_[i] = to_float_grid(rng.uniform(-scale, scale));
  };
  fill(p.embedding_offset(), p.embedding_size());
  fill(p.hidden_w_offset(), shape.embed_dim * shape.hidden_dim);
  fill(p.head_w_offset(), shape.hidden_dim * kNumOutputs);
  return p;
}

bool ModelParams::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

LabelVector argmax_labels(const ProbabilityTable& probs) {
  std::array<MentionClass, kNumTasks> labels{};
  for (TaskId t : kAllTasks) {
    const auto& p = probs[index_of(t)];
    std::size_t best = 0;
    for (std::size_t k = 1; k < p.size(); ++k) {
      if (p[k] > p[best]) best = k;
    }
    labels[index_of(t)] = slot_class(t, best);
  }
  return LabelVector(labels);
}

double Gradients::at(const ModelParams& params, std::size_t flat_index) const {
  if (flat_index >= params.embedding_size()) return dense.at(flat_index - params.embedding_size());
  const auto d = params.shape().embed_dim;
  auto it = embedding_rows.find(static_cast<std::uint32_t>(flat_index / d));
  return it == embedding_rows.end() ? 0.0 : it->second[flat_index % d];
}

Surrogate::Surrogate(HasherConfig hasher, ModelParams params) : hasher_(hasher), params_(std::move(params)) {
  if (hasher.n_buckets != params_.shape().n_buckets) {
    throw ValidationError("hasher buckets and embedding rows disagree");
  }
}

ProbabilityTable Surrogate::forward(std::string_view text) const { return forward_features(hasher_.features(text)); }

ProbabilityTable Surrogate::forward_features(std::span<const std::uint32_t> features) const {
  Activations act;
  forward_into(params_, features, act);
  return to_table(act.probs);
}

double loss(std::span<const Example> batch, const Surrogate& model) { return backward(batch, model).loss; }

Gradients backward(std::span<const Example> batch, const Surrogate& model) {
  std::vector<EncodedExample> encoded;
  encoded.reserve(batch.size());
  for (const auto& e : batch) encoded.push_back(model.encode(e));
  std::vector<const EncodedExample*> ptrs;
  for (const auto& e : encoded) ptrs.push_back(&e);
  return backward_encoded(ptrs, model);
}

Gradients backward_encoded(std::span<const EncodedExample* const> batch, const Surrogate& model) {
  if (batch.empty()) throw PreconditionError("loss needs a non-empty batch");
  const ModelParams& p = model.params();
  const auto& s = p.shape();
  const auto v = p.values();

  Gradients g;
  for (const auto* e : batch) {
    check_example(e->labels);
    g.pairs += e->labels.size();
  }
  g.dense.assign(p.dense_size(), 0.0);
  const double scale = 1.0 / static_cast<double>(g.pairs);
  const std::size_t base = p.embedding_size();
  double* d_hw = g.dense.data() + (p.hidden_w_offset() - base);
  double* d_hb = g.dense.data() + (p.hidden_b_offset() - base);
  double* d_ow = g.dense.data() + (p.head_w_offset() - base);
  double* d_ob = g.dense.data() + (p.head_b_offset() - base);
  const double* hw = v.data() + p.hidden_w_offset();
  const double* ow = v.data() + p.head_w_offset();

  Activations act;
  std::array<double, kNumOutputs> d_logits{};
  std::vector<double> d_hidden(s.hidden_dim), d_embed(s.embed_dim);
  for (const auto* e : batch) {
    forward_into(p, e->features, act);
    d_logits.fill(0.0);
    for (TaskId t : kAllTasks) {
      const auto& label = e->labels[t];
      if (!label) continue;
      const std::size_t off = kHeadOffsets[index_of(t)];
      const std::size_t target = class_slot(t, *label);
      g.loss -= std::log(act.probs[off + target]) * scale;
      for (std::size_t k = 0; k < num_classes(t); ++k) {
        d_logits[off + k] = (act.probs[off + k] - (k == target ? 1.0 : 0.0)) * scale;
      }
    }
    for (std::size_t k = 0; k < kNumOutputs; ++k) d_ob[k] += d_logits[k];
    for (std::size_t j = 0; j < s.hidden_dim; ++j) {
      const double a = act.hidden[j];
      const double* row = ow + j * kNumOutputs;
      double* drow = d_ow + j * kNumOutputs;
      double da = 0.0;
      for (std::size_t k = 0; k < kNumOutputs; ++k) {
        drow[k] += a * d_logits[k];
        da += row[k] * d_logits[k];
      }
      d_hidden[j] = da * (1.0 - a * a);
    }
    for (std::size_t j = 0; j < s.hidden_dim; ++j) d_hb[j] += d_hidden[j];
    for (std::size_t i = 0; i < s.embed_dim; ++i) {
      const double ei = act.embedding[i];
      const double* row = hw + i * s.hidden_dim;
      double* drow = d_hw + i * s.hidden_dim;
      double de = 0.0;
      for (std::size_t j = 0; j < s.hidden_dim; ++j) {
        drow[j] += ei * d_hidden[j];
        de += row[j] * d_hidden[j];
      }
      d_embed[i] = de;
    }
    if (!e->features.empty()) {
      const double inv = 1.0 / static_cast<double>(e->features.size());
      for (auto f : e->features) {
        auto& row = g.embedding_rows[f];
        if (row.empty()) row.assign(s.embed_dim, 0.0);
        for (std::size_t i = 0; i < s.embed_dim; ++i) row[i] += d_embed[i] * inv;
      }
    }
  }
  return g;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(learning_rate > 0)) throw ValidationError("learning_rate must be > 0");
}

json checkpoint_to_json(const Checkpoint& c) {
  const auto& p = c.model.params();
  const auto& s = p.shape();
  const auto v = p.values();
  auto tensor = [&](std::size_t offset, std::vector<std::size_t> shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return json{{"shape", shape}, {"dtype", "float32le"}, {"data", encode_floats(v.subspan(offset, n))}};
  };
  json heads = json::array();
  for (TaskId t : kAllTasks) {
    json classes = json::array();
    for (std::size_t k = 0; k < num_classes(t); ++k) classes.push_back(class_name(slot_class(t, k)));
    heads.push_back({{"task", task_name(t)}, {"offset", head_offset(t)}, {"classes", classes}});
  }
  return json{
      {"format", "silverloop-checkpoint"},
      {"version", Checkpoint::kVersion},
      {"hasher", {{"n_buckets", c.model.hasher().config().n_buckets}, {"seed", c.model.hasher().config().seed},
                  {"ngram_orders", {1, 2}}}},
      {"model", {{"embed_dim", s.embed_dim}, {"hidden_dim", s.hidden_dim}, {"activation", "tanh"}, {"heads", heads}}},
      {"tensors",
       {{"embedding", tensor(p.embedding_offset(), {s.n_buckets, s.embed_dim})},
        {"hidden_weight", tensor(p.hidden_w_offset(), {s.embed_dim, s.hidden_dim})},
        {"hidden_bias", tensor(p.hidden_b_offset(), {s.hidden_dim})},
        {"head_weight", tensor(p.head_w_offset(), {s.hidden_dim, kNumOutputs})},
        {"head_bias", tensor(p.head_b_offset(), {kNumOutputs})}}},
      {"metadata",
       {{"epochs_seen", c.metadata.epochs_seen},
        {"steps", c.metadata.steps},
        {"data_fingerprint", c.metadata.data_fingerprint}}},
  };
}

Checkpoint checkpoint_from_json(const json& j) {
  try {
    if (j.value("format", "") != "silverloop-checkpoint") throw ParseError("not a silverloop checkpoint");
    const int version = j.at("version").get<int>();
    if (version != Checkpoint::kVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version));
    HasherConfig hc;
    hc.n_buckets = j.at("hasher").at("n_buckets").get<std::uint32_t>();
    hc.seed = j.at("hasher").at("seed").get<std::uint64_t>();
    ModelShape shape{hc.n_buckets, j.at("model").at("embed_dim").get<std::size_t>(),
                     j.at("model").at("hidden_dim").get<std::size_t>()};
    ModelParams params(shape);
    auto values = params.values();
    auto load = [&](const char* name, std::size_t offset, std::size_t count) {
      const auto& t = j.at("tensors").at(name);
      if (t.at("dtype").get<std::string>() != "float32le") throw ParseError(std::string("tensor ") + name + ": bad dtype");
      auto data = decode_floats(t.at("data").get<std::string>(), count, name);
      std::copy(data.begin(), data.end(), values.begin() + static_cast<std::ptrdiff_t>(offset));
    };
    load("embedding", params.embedding_offset(), params.embedding_size());
    load("hidden_weight", params.hidden_w_offset(), shape.embed_dim * shape.hidden_dim);
    load("hidden_bias", params.hidden_b_offset(), shape.hidden_dim);
    load("head_weight", params.head_w_offset(), shape.hidden_dim * kNumOutputs);
    load("head_bias", params.head_b_offset(), kNumOutputs);
    if (!params.all_finite()) throw ValidationError("checkpoint contains non-finite parameters");
    TrainingMetadata meta;
    const auto& m = j.at("metadata");
    meta.epochs_seen = m.at("epochs_seen").get<std::size_t>();
    meta.steps = m.at("steps").get<std::uint64_t>();
    meta.data_fingerprint = m.at("data_fingerprint").get<std::string>();
    return Checkpoint{Surrogate(hc, std::move(params)), meta};
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const fs::path& path, const Checkpoint& c) { write_text_atomic(path, checkpoint_to_json(c).dump()); }

Checkpoint load_checkpoint(const fs::path& path) { return checkpoint_from_json(read_json(path)); }

std::string data_fingerprint(std::span<const Example> data) {
  std::uint64_t h = kFnvOffset;
  for (const auto& e : data) {
    h = fnv1a(h, e.text);
    h = fnv1a(h, "\x1e");
    h = fnv1a(h, json(e.labels).dump());
    h = fnv1a(h, "\x1d");
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

AdamOptimizer::AdamOptimizer(const ModelParams& params, const TrainConfig& config)
    : config_(config), m_(params.size(), 0.0), v_(params.size(), 0.0) {}

void AdamOptimizer::step(ModelParams& params, const Gradients& grads) {
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = config_.learning_rate;
  auto values = params.values();
  auto update = [&](std::size_t i, double g) {
    m_[i] = b1 * m_[i] + (1 - b1) * g;
    v_[i] = b2 * v_[i] + (1 - b2) * g * g;
    const double mhat = m_[i] / c1;
    const double vhat = v_[i] / c2;
    values[i] = to_float_grid(values[i] - lr * mhat / (std::sqrt(vhat) + config_.epsilon));
  };
  const std::size_t d = params.shape().embed_dim;
  for (const auto& [row, g] : grads.embedding_rows) {
    const std::size_t base = std::size_t{row} * d;
    for (std::size_t i = 0; i < d; ++i) update(base + i, g[i]);
  }
  const std::size_t base = params.embedding_size();
  for (std::size_t i = 0; i < grads.dense.size(); ++i) update(base + i, grads.dense[i]);
}

Checkpoint initial_checkpoint(const ModelConfig& model, std::uint64_t seed) {
  ModelShape shape{model.hasher.n_buckets, model.embed_dim, model.hidden_dim};
  return Checkpoint{Surrogate(model.hasher, ModelParams::random(shape, seed ^ 0x1a2b3c4d5e6f7081ULL, model.init_scale)),
                    TrainingMetadata{}};
}

Trainer::Trainer(Checkpoint start, TrainConfig config)
    : checkpoint_(std::move(start)),
      config_(config),
      optimizer_(checkpoint_.model.params(), config),
      rng_(config.seed ^ 0x5851f42d4c957f2dULL) {
  config_.validate();
}

double Trainer::step(std::span<const EncodedExample* const> batch, std::size_t batch_index) {
  Gradients g = backward_encoded(batch, checkpoint_.model);
  if (!std::isfinite(g.loss)) {
    throw NumericError("non-finite loss at batch " + std::to_string(batch_index) + " (epoch " +
                       std::to_string(checkpoint_.metadata.epochs_seen + 1) + ")");
  }
  optimizer_.step(checkpoint_.model.mutable_params(), g);
  const auto& p = checkpoint_.model.params();
  const auto v = p.values();
  const bool dense_ok = std::all_of(v.begin() + static_cast<std::ptrdiff_t>(p.embedding_size()), v.end(),
                                    [](double x) { return std::isfinite(x); });
  bool rows_ok = true;
  for (const auto& [row, unused] : g.embedding_rows) {
    const double* r = p.embedding_row(row);
    for (std::size_t i = 0; i < p.shape().embed_dim; ++i) rows_ok = rows_ok && std::isfinite(r[i]);
  }
  if (!dense_ok || !rows_ok) throw NumericError("non-finite parameters after batch " + std::to_string(batch_index));
  ++checkpoint_.metadata.steps;
  return g.loss;
}

double Trainer::run_epoch(std::span<const EncodedExample> data) {
  if (data.empty()) throw PreconditionError("training data is empty");
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (config_.shuffle) rng_.shuffle(order);
  double total = 0.0;
  std::size_t batches = 0;
  std::vector<const EncodedExample*> batch;
  for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
    batch.clear();
    for (std::size_t i = start; i < std::min(order.size(), start + config_.batch_size); ++i) batch.push_back(&data[order[i]]);
    total += step(batch, batches);
    ++batches;
  }
  ++checkpoint_.metadata.epochs_seen;
  return total / static_cast<double>(batches);
}

TrainResult train(std::span<const Example> data, const TrainConfig& config, const ModelConfig& model,
                  const Checkpoint* init, const ValidationSet* validation) {
  config.validate();
  if (data.empty()) throw PreconditionError("training data is empty");
  Trainer trainer(init != nullptr ? *init : initial_checkpoint(model, config.seed), config);
  std::vector<EncodedExample> encoded;
  encoded.reserve(data.size());
  for (const auto& e : data) encoded.push_back(trainer.model().encode(e));

  TrainResult result{trainer.checkpoint(), {}};
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochLog log{epoch, trainer.run_epoch(encoded), std::nullopt};
    if (validation != nullptr && !validation->texts.empty()) {
      std::size_t match = 0, total = 0;
      for (std::size_t i = 0; i < validation->texts.size(); ++i) {
        const auto pred = trainer.model().predict(validation->texts[i]);
        for (TaskId t : kAllTasks) {
          match += pred[t] == validation->reference[i][t] ? 1 : 0;
          ++total;
        }
      }
      log.validation_parity = static_cast<double>(match) / static_cast<double>(total);
    }
    result.log.push_back(log);
  }
  trainer.set_fingerprint(data_fingerprint(data));
  result.checkpoint = trainer.checkpoint();
  return result;
}

Checkpoint fine_tune(const Checkpoint& start, std::span<const Example> annotations, const TrainConfig& config,
                     std::span<const Example> teacher, double mix_teacher) {
  if (annotations.empty()) throw PreconditionError("fine_tune needs at least one annotation");
  if (mix_teacher < 0) throw ValidationError("mix_teacher must be >= 0");
  std::vector<Example> data(annotations.begin(), annotations.end());
  if (mix_teacher > 0 && !teacher.empty()) {
    Rng rng(config.seed ^ 0x7eac4e2ULL);
    std::vector<std::size_t> idx(teacher.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng.shuffle(idx);
    const auto want = static_cast<std::size_t>(std::llround(mix_teacher * static_cast<double>(annotations.size())));
    for (std::size_t i = 0; i < std::min(want, idx.size()); ++i) data.push_back(teacher[idx[i]]);
  }
  ModelConfig unused;
  return train(data, config, unused, &start).checkpoint;
}

void to_json(json& j, const ProbabilityRecord& r) {
  json probs = json::object();
  for (TaskId t : kAllTasks) probs[std::string(task_name(t))] = r.probs[index_of(t)];
  j = json{{"report_id", r.report_id}, {"sentence_index", r.sentence_index}, {"probs", probs}};
}

void from_json(const json& j, ProbabilityRecord& r) {
  r.report_id = j.at("report_id").get<std::string>();
  r.sentence_index = j.at("sentence_index").get<std::int64_t>();
  const auto& probs = j.at("probs");
  for (TaskId t : kAllTasks) {
    auto v = probs.at(std::string(task_name(t))).get<std::vector<double>>();
    if (v.size() != num_classes(t)) {
      throw ParseError("probs." + std::string(task_name(t)) + " must have " + std::to_string(num_classes(t)) +
                       " entries");
    }
    r.probs[index_of(t)] = std::move(v);
  }
}

Predictions predict_corpus(std::span<const SentenceRecord> corpus, const Surrogate& model, std::size_t batch_size,
                           std::size_t parallelism) {
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  const auto start = std::chrono::steady_clock::now();
  Predictions out;
  out.labels.resize(corpus.size());
  out.probabilities.resize(corpus.size());
  const std::size_t n_batches = (corpus.size() + batch_size - 1) / batch_size;
  auto run_batches = [&](std::size_t first, std::size_t last) {
    for (std::size_t b = first; b < last; ++b) {
      for (std::size_t i = b * batch_size; i < std::min(corpus.size(), (b + 1) * batch_size); ++i) {
        const auto& s = corpus[i];
        auto probs = model.forward(s.text);
        out.labels[i] = {s.report_id, s.sentence_index, argmax_labels(probs)};
        out.probabilities[i] = {s.report_id, s.sentence_index, std::move(probs)};
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(parallelism, n_batches));
  if (workers == 1) {
    run_batches(0, n_batches);
  } else {
    std::vector<std::jthread> threads;
    const std::size_t per = (n_batches + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t first = w * per, last = std::min(n_batches, first + per);
      if (first < last) threads.emplace_back(run_batches, first, last);
    }
  }
  out.stats.sentences = corpus.size();
  out.stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.stats.sentences_per_second = out.stats.seconds > 0 ? static_cast<double>(corpus.size()) / out.stats.seconds
                                                         : static_cast<double>(corpus.size());
  return out;
}

}  // namespace silverloop
