#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <set>

#include "gradcheck.hpp"
#include "helpers.hpp"
#include "silverloop/corpus.hpp"
#include "silverloop/error.hpp"
#include "silverloop/eval.hpp"
#include "silverloop/rule_labeler.hpp"
#include "silverloop/surrogate.hpp"

using namespace silverloop;

namespace {

constexpr ModelShape kSmall{1024, 8, 16};

Surrogate zero_model() { return Surrogate(HasherConfig{kSmall.n_buckets}, ModelParams(kSmall)); }

// Every parameter, biases included, uniform in (-scale, scale).
Surrogate random_model(std::uint64_t seed, double scale) {
  ModelParams p(kSmall);
  Rng rng(seed);
  for (auto& x : p.values()) x = rng.uniform(-scale, scale);
  return Surrogate(HasherConfig{kSmall.n_buckets}, std::move(p));
}

Example labeled(std::string text, std::initializer_list<std::pair<TaskId, MentionClass>> labels) {
  Example e{std::move(text), {}};
  for (auto [t, c] : labels) e.labels.set(t, c);
  return e;
}

ModelConfig small_model_config() {
  ModelConfig m;
  m.hasher.n_buckets = kSmall.n_buckets;
  m.embed_dim = kSmall.embed_dim;
  m.hidden_dim = kSmall.hidden_dim;
  return m;
}

std::vector<Example> teacher_examples(std::span<const SentenceRecord> corpus, std::span<const LabelRecord> labels) {
  std::vector<Example> out;
  for (std::size_t i = 0; i < corpus.size(); ++i) out.push_back({corpus[i].text, PartialLabelVector::from(labels[i].labels)});
  return out;
}

struct FixtureData {
  std::vector<SentenceRecord> corpus;
  std::vector<LabelRecord> labels;
};

FixtureData fixture_data(std::size_t n_reports, std::uint64_t seed) {
  auto cfg = GeneratorConfig::defaults();
  cfg.n_reports = n_reports;
  cfg.seed = seed;
  auto g = generate(cfg);
  CompiledRuleSet rules(load_rules(testing::source_path("rules/fixture.json")));
  auto labels = classify_corpus(g.sentences, rules, 1);
  return {std::move(g.sentences), std::move(labels)};
}

}  // namespace

TEST_CASE("feature hasher") {
  FeatureHasher h(HasherConfig{1024});
  auto f = h.features("No pleural effusion.");
  CHECK(f.size() == 4 + 3);
  for (auto x : f) CHECK(x < 1024);
  CHECK(h.features("no PLEURAL effusion .") == f);
  CHECK(h.features("").empty());
  CHECK_THROWS_AS(FeatureHasher(HasherConfig{1000}), ValidationError);
  FeatureHasher other(HasherConfig{1024, 42});
  CHECK(other.features("No pleural effusion.") != f);
}

TEST_CASE("zero params give uniform outputs") {
  auto m = zero_model();
  for (const char* text : {"", "No pleural effusion.", "anything at all"}) {
    auto probs = m.forward(text);
    for (TaskId t : kAllTasks) {
      const double u = t == TaskId::no_finding ? 0.5 : 0.25;
      for (double p : probs[index_of(t)]) CHECK(p == doctest::Approx(u).epsilon(1e-15));
    }
  }
  // Ties go to the lowest ordinal.
  auto labels = m.predict("x");
  CHECK(labels[TaskId::edema] == MentionClass::no_mention);
  CHECK(labels[TaskId::no_finding] == MentionClass::negative);
}

TEST_CASE("uniform cross entropy") {
  auto m = zero_model();
  std::vector<Example> four{labeled("edema", {{TaskId::edema, MentionClass::positive}})};
  CHECK(loss(four, m) == doctest::Approx(1.386294).epsilon(1e-6));
  std::vector<Example> two{labeled("edema", {{TaskId::no_finding, MentionClass::negative}})};
  CHECK(loss(two, m) == doctest::Approx(0.693147).epsilon(1e-6));
}

TEST_CASE("loss errors") {
  auto m = zero_model();
  CHECK_THROWS_AS(loss({}, m), PreconditionError);
  std::vector<Example> unlabeled{Example{"x", {}}};
  CHECK_THROWS_AS(loss(unlabeled, m), PreconditionError);
}

TEST_CASE("loss matches straight-line recomputation") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    auto m = random_model(100 + trial, 0.8);
    auto batch = gradcheck::random_batch(rng, 2, trial % 2 ? 1.0 : 0.5);
    if (trial % 2) {
      for (auto& e : batch) CHECK(e.labels.size() == kNumTasks);
    }
    CHECK(loss(batch, m) == doctest::Approx(gradcheck::reference_loss(batch, m)).epsilon(1e-12));
  }
}

TEST_CASE("probabilities are normalized") {
  Rng rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    auto m = random_model(trial, 2.0);
    auto text = gradcheck::random_batch(rng, 1, 0.1)[0].text;
    auto probs = m.forward(text);
    CHECK(probs == m.forward(text));
    for (TaskId t : kAllTasks) {
      double sum = 0;
      for (double p : probs[index_of(t)]) {
        CHECK(p >= 0.0);
        sum += p;
      }
      CHECK(std::abs(sum - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("gradients match central differences") {
  Rng rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    auto m = random_model(500 + trial, 0.5);
    auto batch = gradcheck::random_batch(rng, 3, 0.4);
    auto r = gradcheck::check(batch, m, 200, rng);
    CAPTURE(r.worst);
    CHECK(r.coordinates == 200);
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("untouched embedding rows get no gradient") {
  auto m = random_model(1, 0.5);
  std::vector<Example> batch{labeled("no edema", {{TaskId::edema, MentionClass::negative}})};
  auto g = backward(batch, m);
  auto feats = m.hasher().features("no edema");
  CHECK(g.embedding_rows.size() <= feats.size());
  for (std::uint32_t row = 0; row < kSmall.n_buckets; ++row) {
    if (std::find(feats.begin(), feats.end(), row) != feats.end()) continue;
    CHECK(g.embedding_rows.count(row) == 0);
    for (std::size_t i = 0; i < kSmall.embed_dim; ++i) CHECK(g.at(m.params(), row * kSmall.embed_dim + i) == 0.0);
  }
}

TEST_CASE("duplicating the batch leaves the gradient unchanged") {
  Rng rng(41);
  auto m = random_model(2, 0.5);
  auto batch = gradcheck::random_batch(rng, 3, 0.5);
  auto doubled = batch;
  doubled.insert(doubled.end(), batch.begin(), batch.end());
  auto a = backward(batch, m);
  auto b = backward(doubled, m);
  CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-12));
  for (std::size_t i = 0; i < a.dense.size(); ++i) CHECK(a.dense[i] == doctest::Approx(b.dense[i]).epsilon(1e-10));
  REQUIRE(a.embedding_rows.size() == b.embedding_rows.size());
  for (const auto& [row, grad] : a.embedding_rows) {
    for (std::size_t i = 0; i < grad.size(); ++i) {
      CHECK(grad[i] == doctest::Approx(b.embedding_rows.at(row)[i]).epsilon(1e-10));
    }
  }
}

TEST_CASE("masked tasks contribute nothing") {
  auto m = random_model(3, 0.5);
  auto full = labeled("possible edema", {{TaskId::edema, MentionClass::uncertain}, {TaskId::fracture, MentionClass::no_mention}});
  auto part = labeled("possible edema", {{TaskId::edema, MentionClass::uncertain}});
  auto other = labeled("possible edema", {{TaskId::fracture, MentionClass::no_mention}});
  std::vector<Example> a{full}, b{part}, c{other};
  CHECK(loss(a, m) == doctest::Approx((loss(b, m) + loss(c, m)) / 2).epsilon(1e-12));
}

TEST_CASE("invalid label is rejected") {
  json j = {{"no_finding", "uncertain"}};
  CHECK_THROWS_AS(j.get<PartialLabelVector>(), InvalidLabelError);
}

TEST_CASE("training decreases loss and is deterministic") {
  auto data = fixture_data(34, 3);
  data.corpus.resize(100);
  data.labels.resize(100);
  auto examples = teacher_examples(data.corpus, data.labels);
  TrainConfig cfg;
  cfg.epochs = 2;
  auto a = train(examples, cfg, small_model_config());
  REQUIRE(a.log.size() == 2);
  CHECK(a.log[1].train_loss < a.log[0].train_loss);
  auto b = train(examples, cfg, small_model_config());
  CHECK(a.checkpoint.model.params() == b.checkpoint.model.params());
  CHECK(a.checkpoint.metadata == b.checkpoint.metadata);
  CHECK(a.checkpoint.metadata.epochs_seen == 2);
  CHECK(a.checkpoint.metadata.steps == 8);
  CHECK(a.checkpoint.metadata.data_fingerprint == data_fingerprint(examples));
  for (double x : a.checkpoint.model.params().values()) CHECK(static_cast<double>(static_cast<float>(x)) == x);
}

TEST_CASE("validation parity is logged") {
  auto data = fixture_data(10, 4);
  auto examples = teacher_examples(data.corpus, data.labels);
  ValidationSet val;
  for (std::size_t i = 0; i < data.corpus.size(); ++i) {
    val.texts.push_back(data.corpus[i].text);
    val.reference.push_back(data.labels[i].labels);
  }
  TrainConfig cfg;
  cfg.epochs = 1;
  auto r = train(examples, cfg, small_model_config(), nullptr, &val);
  REQUIRE(r.log[0].validation_parity);
  CHECK(*r.log[0].validation_parity > 0.0);
  CHECK(*r.log[0].validation_parity <= 1.0);
}

TEST_CASE("train preconditions") {
  CHECK_THROWS_AS(train({}, TrainConfig{}, small_model_config()), PreconditionError);
  std::vector<Example> one{labeled("x", {{TaskId::edema, MentionClass::positive}})};
  TrainConfig bad;
  bad.epochs = 0;
  CHECK_THROWS_AS(train(one, bad, small_model_config()), ValidationError);
  auto init = initial_checkpoint(small_model_config(), 1);
  init.model.mutable_params().values()[init.model.params().head_b_offset()] = std::nan("");
  try {
    train(one, TrainConfig{}, small_model_config(), &init);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("batch 0") != std::string::npos);
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  testing::TempDir dir;
  auto data = fixture_data(5, 5);
  TrainConfig cfg;
  cfg.epochs = 1;
  auto c = train(teacher_examples(data.corpus, data.labels), cfg, small_model_config()).checkpoint;
  save_checkpoint(dir / "c.json", c);
  auto back = load_checkpoint(dir / "c.json");
  CHECK(back.model.params() == c.model.params());
  CHECK(back.model.hasher().config() == c.model.hasher().config());
  CHECK(back.metadata == c.metadata);

  json j = checkpoint_to_json(c);
  j["version"] = 99;
  CHECK_THROWS_AS(checkpoint_from_json(j), ParseError);
  j = checkpoint_to_json(c);
  j["tensors"]["hidden_bias"]["data"] = "AAAA";
  CHECK_THROWS_AS(checkpoint_from_json(j), ParseError);
}

TEST_CASE("zero extra epochs leave predictions unchanged") {
  auto data = fixture_data(5, 6);
  TrainConfig cfg;
  cfg.epochs = 1;
  auto c = train(teacher_examples(data.corpus, data.labels), cfg, small_model_config()).checkpoint;
  Trainer t(c, cfg);
  auto a = predict_corpus(data.corpus, c.model, 16);
  auto b = predict_corpus(data.corpus, t.model(), 16);
  CHECK(json(a.labels) == json(b.labels));
}

TEST_CASE("batch size does not change predictions") {
  auto data = fixture_data(30, 7);
  TrainConfig cfg;
  cfg.epochs = 1;
  auto c = train(teacher_examples(data.corpus, data.labels), cfg, small_model_config()).checkpoint;
  auto one = predict_corpus(data.corpus, c.model, 1);
  auto many = predict_corpus(data.corpus, c.model, 64);
  auto threaded = predict_corpus(data.corpus, c.model, 7, 4);
  CHECK(json(one.labels) == json(many.labels));
  CHECK(json(one.probabilities) == json(threaded.probabilities));
  CHECK(one.stats.sentences == data.corpus.size());
  CHECK(one.stats.sentences_per_second > 0);
  CHECK_THROWS_AS(predict_corpus(data.corpus, c.model, 0), ValidationError);
}

TEST_CASE("probability records round trip") {
  auto m = random_model(9, 0.5);
  ProbabilityRecord r{"r", 3, m.forward("edema")};
  auto back = json(r).get<ProbabilityRecord>();
  CHECK(back.probs == r.probs);
  json bad = json(r);
  bad["probs"]["no_finding"] = {0.2, 0.3, 0.5};
  CHECK_THROWS_AS(bad.get<ProbabilityRecord>(), ParseError);
}

TEST_CASE("golden predictions") {
  const auto corpus = read_corpus(testing::source_path("tests/data/fixture_corpus.jsonl"));
  if (std::getenv("SILVERLOOP_WRITE_GOLDEN") != nullptr) {
    CompiledRuleSet rules(load_rules(testing::source_path("rules/fixture.json")));
    auto labels = classify_corpus(corpus, rules, 1);
    TrainConfig cfg;
    cfg.epochs = 3;
    auto c = train(teacher_examples(corpus, labels), cfg, small_model_config()).checkpoint;
    save_checkpoint(testing::source_path("tests/data/fixture_checkpoint.json"), c);
    write_labels(testing::source_path("tests/data/fixture_predictions.jsonl"), predict_corpus(corpus, c.model, 8).labels);
  }
  auto c = load_checkpoint(testing::source_path("tests/data/fixture_checkpoint.json"));
  auto golden = read_labels(testing::source_path("tests/data/fixture_predictions.jsonl"));
  auto got = predict_corpus(corpus, c.model, 8);
  CHECK(got.labels == golden);
}

TEST_CASE("fine-tune on 1086 partial annotations") {
  auto data = fixture_data(300, 8);
  TrainConfig cfg;
  cfg.epochs = 1;
  auto start = train(teacher_examples(data.corpus, data.labels), cfg, small_model_config()).checkpoint;
  Rng rng(12);
  std::vector<Example> annotations;
  for (std::size_t i = 0; i < 1086; ++i) {
    const auto& s = data.corpus[i % data.corpus.size()];
    Example e{s.text, {}};
    TaskId t = kAllTasks[rng.below(kNumTasks)];
    e.labels.set(t, data.labels[i % data.corpus.size()].labels[t]);
    annotations.push_back(std::move(e));
  }
  TrainConfig ft;
  ft.epochs = 1;
  auto after = fine_tune(start, annotations, ft);
  CHECK(after.model.params().all_finite());
  CHECK(std::isfinite(loss(annotations, after.model)));
  CHECK(after.metadata.epochs_seen == start.metadata.epochs_seen + 1);
  CHECK_THROWS_AS(fine_tune(start, {}, ft), PreconditionError);
}

TEST_CASE("fine-tune on teacher-agreeing annotations barely moves parity") {
  auto data = fixture_data(2000, 10);
  auto manifest = split(data.corpus, {}, 10);
  std::set<std::string> train_ids(manifest.train_report_ids.begin(), manifest.train_report_ids.end());
  std::vector<SentenceRecord> train_c, test_c;
  std::vector<LabelRecord> train_l, test_l;
  for (std::size_t i = 0; i < data.corpus.size(); ++i) {
    if (train_ids.count(data.corpus[i].report_id)) {
      train_c.push_back(data.corpus[i]);
      train_l.push_back(data.labels[i]);
    } else {
      test_c.push_back(data.corpus[i]);
      test_l.push_back(data.labels[i]);
    }
  }
  TrainConfig cfg;
  cfg.epochs = 3;
  ModelConfig mc;
  mc.hasher.n_buckets = 1u << 14;
  mc.embed_dim = 32;
  mc.hidden_dim = 64;
  auto start = train(teacher_examples(train_c, train_l), cfg, mc).checkpoint;

  Rng rng(13);
  std::vector<Example> agreeing;
  for (std::size_t i = 0; i < 1000; ++i) {
    std::size_t k = rng.below(train_c.size());
    Example e{train_c[k].text, {}};
    for (TaskId t : kAllTasks) {
      if (rng.bernoulli(0.3)) e.labels.set(t, train_l[k].labels[t]);
    }
    if (e.labels.empty()) e.labels.set(TaskId::no_finding, train_l[k].labels[TaskId::no_finding]);
    agreeing.push_back(std::move(e));
  }
  TrainConfig ft;
  ft.epochs = 1;
  ft.batch_size = 16;
  auto after = fine_tune(start, agreeing, ft);
  auto before_parity = parity(test_l, predict_corpus(test_c, start.model, 64).labels).overall_match;
  auto after_parity = parity(test_l, predict_corpus(test_c, after.model, 64).labels).overall_match;
  CAPTURE(before_parity);
  CAPTURE(after_parity);
  CHECK(std::abs(after_parity - before_parity) * 100 < 0.5);
}
