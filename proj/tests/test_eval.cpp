#include <doctest.h>

#include "helpers.hpp"
#include "metric_oracle.hpp"
#include "silverloop/error.hpp"
#include "silverloop/eval.hpp"

using namespace silverloop;

namespace {

LabelRecord rec(std::string rid, std::int64_t idx, std::initializer_list<std::pair<TaskId, MentionClass>> findings) {
  std::array<MentionClass, kNumTasks> v{};
  v.fill(MentionClass::no_mention);
  for (auto [t, c] : findings) v[index_of(t)] = c;
  return {std::move(rid), idx, LabelVector::with_derived_no_finding(v)};
}

AnnotationRecord ann(std::string key, std::string rid, std::int64_t idx, TaskId t, MentionClass c,
                     std::string who = "a") {
  return {std::move(key), std::move(rid), idx, t, c, std::move(who), "2024-01-01T00:00:00Z", AnnotationSource::heldout};
}

}  // namespace

TEST_CASE("identical files match fully") {
  Rng rng(1);
  auto a = testing::random_label_file(rng, 30);
  auto r = parity(a, a);
  CHECK(r.overall_match == 1.0);
  CHECK(r.task_macro_match == 1.0);
  for (double f : r.per_task_failure) CHECK(f == 0.0);
  CHECK(r.n_sentences == 30);
  CHECK(r.n_pairs == 30 * kNumTasks);
}

TEST_CASE("one differing task") {
  std::vector<LabelRecord> a{rec("r", 0, {})};
  std::vector<LabelRecord> b{rec("r", 0, {{TaskId::edema, MentionClass::negative}})};
  auto r = parity(a, b);
  CHECK(r.n_matches == 13);
  CHECK(r.overall_match == doctest::Approx(0.928571).epsilon(1e-6));
  CHECK(r.per_task_failure[index_of(TaskId::edema)] == 1.0);
  CHECK(r.confusion[index_of(TaskId::edema)][0][1] == 1);
  auto norm = r.row_normalized(TaskId::edema);
  CHECK(norm[0][1] == 1.0);
  CHECK(norm[1][1] == 0.0);
  CHECK(r.log_scaled(TaskId::edema)[0][1] == doctest::Approx(std::log10(2.0)));
}

TEST_CASE("misaligned files") {
  std::vector<LabelRecord> a{rec("r", 0, {}), rec("r", 1, {})};
  std::vector<LabelRecord> b{rec("r", 0, {}), rec("q", 1, {})};
  try {
    parity(a, b);
    FAIL("expected misalignment");
  } catch (const MisalignedError& e) {
    CHECK(std::string(e.what()).find("r#1") != std::string::npos);
  }
  std::vector<LabelRecord> c{rec("r", 0, {})};
  CHECK_THROWS_AS(parity(a, c), MisalignedError);
  CHECK_THROWS_AS(f1(a, c), MisalignedError);
}

TEST_CASE("unseen-key filter") {
  std::vector<SentenceRecord> corpus{SentenceRecord::make("r", 0, "A."), SentenceRecord::make("r", 1, "B.")};
  std::vector<std::string> keys{"b"};
  auto filter = KeyFilter::from(corpus, keys);
  std::vector<LabelRecord> ref{rec("r", 0, {}), rec("r", 1, {})};
  std::vector<LabelRecord> pred{rec("r", 0, {{TaskId::edema, MentionClass::positive}}), rec("r", 1, {})};
  auto r = parity(ref, pred, &filter);
  CHECK(r.n_sentences == 1);
  CHECK(r.overall_match == 1.0);
  std::vector<LabelRecord> stray{rec("x", 0, {})};
  CHECK_THROWS_AS(parity(stray, stray, &filter), NotFoundError);
}

TEST_CASE("majority baseline") {
  std::vector<LabelRecord> ref{rec("r", 0, {{TaskId::edema, MentionClass::positive}}),
                               rec("r", 1, {{TaskId::edema, MentionClass::positive}}),
                               rec("r", 2, {{TaskId::edema, MentionClass::negative}}),
                               rec("r", 3, {{TaskId::edema, MentionClass::negative}})};
  auto b = majority_baseline(ref);
  CHECK(b[index_of(TaskId::edema)] == 0.5);
  CHECK(b[index_of(TaskId::fracture)] == 0.0);
  CHECK_THROWS_AS(majority_baseline({}), PreconditionError);
  auto table = render_failure_table(parity(ref, ref), b);
  CHECK(table.find("edema") != std::string::npos);
  CHECK(table.find("50.00") != std::string::npos);
  CHECK(render_confusion(parity(ref, ref)).find("support_devices") != std::string::npos);
}

TEST_CASE("F1 trivial cases") {
  Rng rng(2);
  auto a = testing::random_label_file(rng, 40);
  auto r = f1(a, a);
  for (auto k : kAllF1Kinds) CHECK(r.micro_f1(k) == 1.0);
  std::vector<LabelRecord> none;
  for (const auto& x : a) none.push_back(rec(x.report_id, x.sentence_index, {}));
  CHECK(f1(a, none).micro_f1(F1Kind::mention) == 0.0);
}

TEST_CASE("F1 on the hand-counted fixture") {
  auto ref = read_labels(testing::source_path("tests/data/f1_reference.jsonl"));
  auto pred = read_labels(testing::source_path("tests/data/f1_prediction.jsonl"));
  auto expected = read_json(testing::source_path("tests/data/f1_expected.json"));
  REQUIRE(ref.size() == 6);
  auto r = f1(ref, pred);
  auto same = [](const F1Counts& c, const json& j) {
    return c.tp == j.at("tp").get<std::uint64_t>() && c.fp == j.at("fp").get<std::uint64_t>() &&
           c.fn == j.at("fn").get<std::uint64_t>();
  };
  for (auto k : kAllF1Kinds) {
    CAPTURE(f1_kind_name(k));
    CHECK(same(r.micro[static_cast<std::size_t>(k)], expected["micro"][std::string(f1_kind_name(k))]));
  }
  for (const auto& [task, kinds] : expected["per_task"].items()) {
    for (const auto& [kind, counts] : kinds.items()) {
      CAPTURE(task);
      CAPTURE(kind);
      std::size_t k = kind == "mention" ? 0 : kind == "negation" ? 1 : 2;
      CHECK(same(r.per_task[index_of(task_from_name(task))][k], counts));
    }
  }
  CHECK(r.micro_f1(F1Kind::mention) == doctest::Approx(12.0 / 13.0));
  CHECK(r.micro_f1(F1Kind::negation) == doctest::Approx(0.5));
  CHECK(r.micro_f1(F1Kind::uncertainty) == 1.0);
  CHECK(to_json(r)["per_task"].size() == 13);
}

TEST_CASE("metric self-consistency on random files") {
  Rng rng(77);
  for (int i = 0; i < 100; ++i) {
    auto ref = testing::random_label_file(rng, 1 + rng.below(60));
    auto pred = testing::perturb(rng, ref, rng.unit());
    auto errors = metric_oracle::check(ref, pred);
    CHECK(errors.empty());
    for (const auto& e : errors) MESSAGE(e);
  }
}

TEST_CASE("gold accuracy") {
  std::vector<LabelRecord> pred{rec("r", 0, {{TaskId::edema, MentionClass::positive}}), rec("r", 1, {})};
  std::vector<AnnotationRecord> gold{ann("k0", "r", 0, TaskId::edema, MentionClass::positive),
                                     ann("k1", "r", 1, TaskId::edema, MentionClass::negative),
                                     ann("k1", "r", 1, TaskId::fracture, MentionClass::no_mention)};
  auto g = gold_accuracy(gold, pred);
  CHECK(*g.task(TaskId::edema) == 0.5);
  CHECK(*g.task(TaskId::fracture) == 1.0);
  CHECK_FALSE(g.task(TaskId::pneumonia));
  CHECK(g.macro == 0.75);
  std::vector<AnnotationRecord> missing{ann("k9", "r", 9, TaskId::edema, MentionClass::positive)};
  CHECK_THROWS_AS(gold_accuracy(missing, pred), NotFoundError);

  std::vector<AnnotationRecord> exact{ann("k0", "r", 0, TaskId::edema, MentionClass::positive)};
  CHECK(gold_accuracy(exact, pred).macro == 1.0);

  std::vector<SystemAccuracy> systems{{"teacher", g}, {"student", gold_accuracy(exact, pred)}};
  auto text = render_gold_comparison(systems);
  CHECK(text.find("average accuracy of teacher: 75.0%") != std::string::npos);
  CHECK(text.find("+50.0") != std::string::npos);
  auto j = gold_comparison_json(systems);
  CHECK(j["systems"][1]["system"] == "student");
  CHECK(j["systems"][0]["accuracy"]["macro"] == 0.75);
}

TEST_CASE("agreement") {
  std::vector<AnnotationRecord> a{ann("k0", "r", 0, TaskId::edema, MentionClass::positive),
                                  ann("k1", "r", 1, TaskId::edema, MentionClass::negative)};
  CHECK(agreement(a, a).rate == 1.0);
  auto b = a;
  b[1].label = MentionClass::uncertain;
  b.push_back(ann("k2", "r", 2, TaskId::edema, MentionClass::negative));
  auto r = agreement(a, b);
  CHECK(r.shared_pairs == 2);
  CHECK(r.rate == 0.5);
  std::vector<AnnotationRecord> c{ann("k5", "r", 5, TaskId::edema, MentionClass::positive)};
  CHECK_THROWS_AS(agreement(a, c), PreconditionError);

  std::vector<LabelRecord> labels{rec("r", 0, {{TaskId::edema, MentionClass::positive}}), rec("r", 1, {}),
                                  rec("r", 2, {})};
  auto with = agreement(a, b, labels);
  REQUIRE(with.a_vs_labels);
  CHECK(*with.a_vs_labels == 0.5);
  CHECK(to_json(with)["rate"] == 0.5);
}

TEST_CASE("bench") {
  std::vector<SentenceRecord> corpus;
  for (int i = 0; i < 200; ++i) corpus.push_back(SentenceRecord::make("r", i, "No pleural effusion."));
  CompiledRuleSet rules(load_rules(testing::source_path("rules/fixture.json")));
  Surrogate student(HasherConfig{1024}, ModelParams::random({1024, 8, 16}, 1));
  auto b = bench(corpus, rules, student, 1);
  CHECK(b.sentences == 200);
  CHECK(b.teacher_sentences_per_second > 0);
  CHECK(b.student_sentences_per_second > 0);
  CHECK(b.speedup == doctest::Approx(b.student_sentences_per_second / b.teacher_sentences_per_second));
  CHECK(to_json(b)["teacher"]["sentences_per_second"].get<double>() > 0);
  CHECK_THROWS_AS(bench({}, rules, student, 1), PreconditionError);
}

TEST_CASE("discrepancy sampling") {
  std::vector<LabelRecord> ref, pred;
  for (int i = 0; i < 60; ++i) {
    ref.push_back(rec("r", i, {}));
    // nine lung_lesion discrepancies, sixty edema discrepancies
    pred.push_back(rec("r", i, {{TaskId::edema, MentionClass::negative}}));
    if (i < 9) pred.back() = rec("r", i, {{TaskId::edema, MentionClass::negative}, {TaskId::lung_lesion, MentionClass::negative}});
  }
  auto q = discrepancy_sample(ref, pred, 46, 5);
  std::map<TaskId, std::size_t> per_task;
  for (const auto& e : q.items) ++per_task[e.task];
  CHECK(per_task[TaskId::lung_lesion] == 9);
  CHECK(per_task[TaskId::edema] == 46);
  CHECK(per_task.count(TaskId::fracture) == 0);
  CHECK(q.a_source.size() == q.items.size());
  for (const auto& e : q.items) CHECK(e.label_a != e.label_b);

  auto again = discrepancy_sample(ref, pred, 46, 5);
  CHECK(queue_items_json(q) == queue_items_json(again));
  CHECK(discrepancy_sample(ref, ref, 46, 5).items.empty());

  // Blinding: the item file alone carries no source.
  auto items = queue_items_json(q);
  CHECK(items.dump().find("reference") == std::string::npos);
  auto back = queue_from_json(items, unblinding_json(q));
  REQUIRE(back.items.size() == q.items.size());
  for (const auto& e : back.items) {
    const auto src = back.a_source.at(e.blinding_id);
    const std::size_t i = static_cast<std::size_t>(e.sentence_index);
    const auto ref_label = ref[i].labels[e.task];
    CHECK((src == LabelSource::reference ? e.label_a : e.label_b) == ref_label);
  }
}

TEST_CASE("adjudication tally") {
  std::vector<LabelRecord> ref{rec("r", 0, {}), rec("r", 1, {})};
  std::vector<LabelRecord> pred{rec("r", 0, {{TaskId::edema, MentionClass::positive}}),
                                rec("r", 1, {{TaskId::edema, MentionClass::positive}})};
  auto q = discrepancy_sample(ref, pred, 46, 3);
  std::vector<AdjudicationRecord> verdicts;
  for (const auto& e : q.items) {
    if (e.task != TaskId::edema) continue;
    // Always pick the reference label.
    auto v = q.a_source.at(e.blinding_id) == LabelSource::reference ? Verdict::prefer_a : Verdict::prefer_b;
    verdicts.push_back({e.dedup_key, e.task, v, "x", e.blinding_id, "t"});
  }
  verdicts.push_back({"", TaskId::no_finding, Verdict::unsure, "x", q.items.front().blinding_id, "t"});
  auto t = tally_adjudications(q, verdicts);
  CHECK(t[index_of(TaskId::edema)].prefer_reference == 2);
  CHECK(t[index_of(TaskId::edema)].prefer_prediction == 0);
  CHECK(t[kNumTasks].n == 3);
  CHECK(t[kNumTasks].unsure == 1);
  std::vector<AdjudicationRecord> unknown{{"", TaskId::edema, Verdict::unsure, "x", "adj-999999", "t"}};
  CHECK_THROWS_AS(tally_adjudications(q, unknown), NotFoundError);
}
