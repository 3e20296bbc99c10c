#include "silverloop/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <functional>
#include <iostream>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include "silverloop/active.hpp"
#include "silverloop/corpus.hpp"
#include "silverloop/error.hpp"
#include "silverloop/eval.hpp"
#include "silverloop/rule_labeler.hpp"
#include "silverloop/service.hpp"
#include "silverloop/surrogate.hpp"

namespace silverloop {
namespace {

struct Context {
  fs::path data_dir = ".";
  std::uint64_t seed = 1;
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;

  fs::path path(const std::string& p) const {
    fs::path q(p);
    return q.is_absolute() ? q : data_dir / q;
  }
};

std::size_t default_parallelism() { return std::max(1u, std::thread::hardware_concurrency()); }

std::vector<Example> join_examples(std::span<const SentenceRecord> corpus, std::span<const LabelRecord> labels) {
  std::unordered_map<SentenceId, const LabelVector*> by_id;
  for (const auto& l : labels) by_id.emplace(l.id(), &l.labels);
  std::vector<Example> out;
  out.reserve(corpus.size());
  for (const auto& s : corpus) {
    auto it = by_id.find(s.id());
    if (it == by_id.end()) throw NotFoundError("no label for corpus sentence " + s.id().str());
    out.push_back({s.text, PartialLabelVector::from(*it->second)});
  }
  return out;
}

std::vector<AnnotationRecord> read_annotations(const fs::path& p) { return read_jsonl<AnnotationRecord>(p); }

std::unordered_set<std::string> annotated_keys(const fs::path& store) {
  std::unordered_set<std::string> keys;
  if (!fs::exists(store)) return keys;
  for (const auto& a : read_annotations(store)) keys.insert(a.dedup_key);
  return keys;
}

void add_train_options(CLI::App* sub, TrainConfig& tc) {
  sub->add_option("--epochs", tc.epochs, "Passes over the data")->capture_default_str();
  sub->add_option("--batch-size", tc.batch_size, "Examples per step")->capture_default_str();
  sub->add_option("--lr", tc.learning_rate, "Adam learning rate")->capture_default_str();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Context ctx;
  ctx.out = &out;
  ctx.err = &err;
  if (const char* env = std::getenv("SILVERLOOP_DATA")) ctx.data_dir = env;

  CLI::App app{"Rule-labeler distillation and active-learning toolkit", "silverloop"};
  app.require_subcommand(1);
  std::string data_dir = ctx.data_dir.string();
  app.add_option("--data-dir", data_dir, "Base directory for relative paths (env SILVERLOOP_DATA)");
  app.add_option("--seed", ctx.seed, "Seed for every random choice")->capture_default_str();
  std::function<void()> action;

  // gen-corpus
  struct {
    std::string config, out = "corpus.jsonl", gold;
    std::optional<std::size_t> n_reports;
    std::optional<double> typo_rate, cue_typo_rate, synonym_rate;
    bool typos_in_cues = false;
  } gen;
  auto* gen_cmd = app.add_subcommand("gen-corpus", "Generate a synthetic report corpus with gold labels");
  gen_cmd->add_option("--config", gen.config, "Generator config JSON (defaults when absent)");
  gen_cmd->add_option("--n-reports", gen.n_reports, "Number of reports");
  gen_cmd->add_option("--typo-rate", gen.typo_rate, "Per-word typo probability");
  gen_cmd->add_option("--cue-typo-rate", gen.cue_typo_rate, "Typo probability for cue words");
  gen_cmd->add_flag("--typos-in-cues", gen.typos_in_cues, "Allow typos inside cue words");
  gen_cmd->add_option("--synonym-rate", gen.synonym_rate, "Synonym swap probability");
  gen_cmd->add_option("--out", gen.out, "Corpus JSONL")->capture_default_str();
  gen_cmd->add_option("--gold", gen.gold, "Gold labels JSONL");
  gen_cmd->callback([&] {
    action = [&] {
      auto config = gen.config.empty() ? GeneratorConfig::defaults()
                                       : generator_config_from_json(read_json(ctx.path(gen.config)));
      config.seed = ctx.seed;
      if (gen.n_reports) config.n_reports = *gen.n_reports;
      if (gen.typo_rate) config.noise.typo_rate = *gen.typo_rate;
      if (gen.cue_typo_rate) config.noise.cue_typo_rate = *gen.cue_typo_rate;
      if (gen.synonym_rate) config.noise.synonym_swap_rate = *gen.synonym_rate;
      if (gen.typos_in_cues) config.noise.typos_in_cues = true;
      const auto corpus = generate(config);
      write_corpus(ctx.path(gen.out), corpus.sentences);
      if (!gen.gold.empty()) write_labels(ctx.path(gen.gold), corpus.gold);
      out << "wrote " << corpus.sentences.size() << " sentences\n";
    };
  });

  // ingest
  struct {
    std::string in, format = "jsonl", out = "corpus.jsonl";
  } ing;
  auto* ingest_cmd = app.add_subcommand("ingest", "Convert a user corpus (JSONL or CSV) to a sentence corpus");
  ingest_cmd->add_option("--in", ing.in, "Input file")->required();
  ingest_cmd->add_option("--format", ing.format, "jsonl or csv")->capture_default_str();
  ingest_cmd->add_option("--out", ing.out, "Corpus JSONL")->capture_default_str();
  ingest_cmd->callback([&] {
    action = [&] {
      const auto corpus = ingest(ctx.path(ing.in), parse_ingest_format(ing.format));
      write_corpus(ctx.path(ing.out), corpus);
      out << "wrote " << corpus.size() << " sentences\n";
    };
  });

  // split
  struct {
    std::string corpus = "corpus.jsonl", out = "split.json", parts;
    SplitFractions fractions;
  } spl;
  auto* split_cmd = app.add_subcommand("split", "Split a corpus by report into train/val/test");
  split_cmd->add_option("--corpus", spl.corpus, "Corpus JSONL")->capture_default_str();
  split_cmd->add_option("--out", spl.out, "Split manifest JSON")->capture_default_str();
  split_cmd->add_option("--train", spl.fractions.train)->capture_default_str();
  split_cmd->add_option("--val", spl.fractions.val)->capture_default_str();
  split_cmd->add_option("--test", spl.fractions.test)->capture_default_str();
  split_cmd->add_option("--parts", spl.parts, "Directory for train/val/test corpus files");
  split_cmd->callback([&] {
    action = [&] {
      const auto corpus = read_corpus(ctx.path(spl.corpus));
      const auto manifest = split(corpus, spl.fractions, ctx.seed);
      write_json(ctx.path(spl.out), manifest);
      if (!spl.parts.empty()) {
        const auto dir = ctx.path(spl.parts);
        fs::create_directories(dir);
        auto emit = [&](const std::vector<std::string>& ids, const char* name) {
          std::unordered_set<std::string> set(ids.begin(), ids.end());
          std::vector<SentenceRecord> part;
          for (const auto& s : corpus) {
            if (set.count(s.report_id)) part.push_back(s);
          }
          write_corpus(dir / name, part);
        };
        emit(manifest.train_report_ids, "train.jsonl");
        emit(manifest.val_report_ids, "val.jsonl");
        emit(manifest.test_report_ids, "test.jsonl");
      }
      out << "train " << manifest.train_report_ids.size() << " val " << manifest.val_report_ids.size() << " test "
          << manifest.test_report_ids.size() << " reports; " << manifest.unseen_test_keys.size()
          << " unseen test sentences\n";
    };
  });

  // label
  struct {
    std::string rules, corpus = "corpus.jsonl", out = "labels.jsonl";
    std::size_t parallelism = default_parallelism();
  } lab;
  auto* label_cmd = app.add_subcommand("label", "Label a corpus with the rule engine");
  label_cmd->add_option("--rules", lab.rules, "Rule set JSON")->required();
  label_cmd->add_option("--corpus", lab.corpus, "Corpus JSONL")->capture_default_str();
  label_cmd->add_option("--out", lab.out, "Labels JSONL")->capture_default_str();
  label_cmd->add_option("--parallelism", lab.parallelism, "Worker threads")->capture_default_str();
  label_cmd->callback([&] {
    action = [&] {
      const CompiledRuleSet rules(load_rules(ctx.path(lab.rules)));
      const auto stats = classify_corpus_file(ctx.path(lab.corpus), rules, lab.parallelism, ctx.path(lab.out));
      out << "labeled " << stats.sentences << " sentences in " << stats.seconds << " s ("
          << stats.sentences_per_second << " sentences/s)\n";
    };
  });

  // train
  struct {
    std::string corpus = "corpus.jsonl", labels = "labels.jsonl", out = "checkpoint.json", val_corpus, val_labels,
                log;
    TrainConfig tc;
    ModelConfig mc;
  } trn;
  auto* train_cmd = app.add_subcommand("train", "Train the student on teacher labels");
  train_cmd->add_option("--corpus", trn.corpus, "Corpus JSONL")->capture_default_str();
  train_cmd->add_option("--labels", trn.labels, "Teacher labels JSONL")->capture_default_str();
  train_cmd->add_option("--out", trn.out, "Checkpoint JSON")->capture_default_str();
  add_train_options(train_cmd, trn.tc);
  train_cmd->add_option("--embed-dim", trn.mc.embed_dim)->capture_default_str();
  train_cmd->add_option("--hidden-dim", trn.mc.hidden_dim)->capture_default_str();
  train_cmd->add_option("--buckets", trn.mc.hasher.n_buckets, "Hash buckets (power of two)")->capture_default_str();
  train_cmd->add_option("--val-corpus", trn.val_corpus, "Validation corpus for per-epoch parity");
  train_cmd->add_option("--val-labels", trn.val_labels, "Validation teacher labels");
  train_cmd->add_option("--log", trn.log, "Epoch log JSON");
  train_cmd->callback([&] {
    action = [&] {
      trn.tc.seed = ctx.seed;
      const auto corpus = read_corpus(ctx.path(trn.corpus));
      const auto data = join_examples(corpus, read_labels(ctx.path(trn.labels)));
      std::optional<ValidationSet> val;
      if (!trn.val_corpus.empty()) {
        val.emplace();
        std::unordered_map<SentenceId, LabelVector> by_id;
        for (const auto& l : read_labels(ctx.path(trn.val_labels))) by_id.emplace(l.id(), l.labels);
        for (auto& s : read_corpus(ctx.path(trn.val_corpus))) {
          auto it = by_id.find(s.id());
          if (it == by_id.end()) throw NotFoundError("no label for validation sentence " + s.id().str());
          val->texts.push_back(std::move(s.text));
          val->reference.push_back(it->second);
        }
      }
      const auto result = train(data, trn.tc, trn.mc, nullptr, val ? &*val : nullptr);
      save_checkpoint(ctx.path(trn.out), result.checkpoint);
      json log = json::array();
      for (const auto& e : result.log) {
        json row{{"epoch", e.epoch}, {"train_loss", e.train_loss}};
        if (e.validation_parity) row["validation_parity"] = *e.validation_parity;
        log.push_back(row);
        out << "epoch " << e.epoch << " loss " << e.train_loss;
        if (e.validation_parity) out << " val_parity " << *e.validation_parity;
        out << "\n";
      }
      if (!trn.log.empty()) write_json(ctx.path(trn.log), log);
    };
  });

  // predict
  struct {
    std::string checkpoint = "checkpoint.json", corpus = "corpus.jsonl", out = "predictions.jsonl", probs;
    std::size_t batch_size = 256;
    std::size_t parallelism = default_parallelism();
  } prd;
  auto* predict_cmd = app.add_subcommand("predict", "Run the student over a corpus");
  predict_cmd->add_option("--checkpoint", prd.checkpoint)->capture_default_str();
  predict_cmd->add_option("--corpus", prd.corpus)->capture_default_str();
  predict_cmd->add_option("--out", prd.out, "Argmax labels JSONL")->capture_default_str();
  predict_cmd->add_option("--probs", prd.probs, "Probabilities JSONL");
  predict_cmd->add_option("--batch-size", prd.batch_size)->capture_default_str();
  predict_cmd->add_option("--parallelism", prd.parallelism)->capture_default_str();
  predict_cmd->callback([&] {
    action = [&] {
      const auto ckpt = load_checkpoint(ctx.path(prd.checkpoint));
      const auto p = predict_corpus(read_corpus(ctx.path(prd.corpus)), ckpt.model, prd.batch_size, prd.parallelism);
      write_labels(ctx.path(prd.out), p.labels);
      if (!prd.probs.empty()) write_jsonl<ProbabilityRecord>(ctx.path(prd.probs), p.probabilities);
      out << "predicted " << p.stats.sentences << " sentences (" << p.stats.sentences_per_second
          << " sentences/s)\n";
    };
  });

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluation reports");
  eval_cmd->require_subcommand(1);
  struct {
    std::string ref, pred, out, corpus, split, confusion;
  } par;
  auto* parity_cmd = eval_cmd->add_subcommand("parity", "Label parity between two label files");
  parity_cmd->add_option("--ref", par.ref, "Reference labels")->required();
  parity_cmd->add_option("--pred", par.pred, "Predicted labels")->required();
  parity_cmd->add_option("--out", par.out, "Report JSON");
  parity_cmd->add_option("--split", par.split, "Split manifest; restricts to unseen test sentences");
  parity_cmd->add_option("--corpus", par.corpus, "Corpus (needed with --split)");
  parity_cmd->add_option("--confusion", par.confusion, "Write confusion matrices as text");
  parity_cmd->callback([&] {
    action = [&] {
      const auto ref = read_labels(ctx.path(par.ref));
      const auto pred = read_labels(ctx.path(par.pred));
      std::optional<KeyFilter> filter;
      if (!par.split.empty()) {
        if (par.corpus.empty()) throw ValidationError("--split needs --corpus");
        const auto manifest = read_json(ctx.path(par.split)).get<SplitManifest>();
        const auto corpus = read_corpus(ctx.path(par.corpus));
        filter = KeyFilter::from(corpus, manifest.unseen_test_keys);
      }
      const auto report = parity(ref, pred, filter ? &*filter : nullptr);
      out << render_failure_table(report, majority_baseline(ref));
      if (!par.out.empty()) write_json(ctx.path(par.out), to_json(report));
      if (!par.confusion.empty()) write_text_atomic(ctx.path(par.confusion), render_confusion(report));
    };
  });

  struct {
    std::string ref, pred, out;
  } f1o;
  auto* f1_cmd = eval_cmd->add_subcommand("f1", "Mention, negation and uncertainty F1");
  f1_cmd->add_option("--ref", f1o.ref)->required();
  f1_cmd->add_option("--pred", f1o.pred)->required();
  f1_cmd->add_option("--out", f1o.out, "Report JSON");
  f1_cmd->callback([&] {
    action = [&] {
      const auto report = f1(read_labels(ctx.path(f1o.ref)), read_labels(ctx.path(f1o.pred)));
      const auto j = to_json(report);
      out << j.dump(2) << "\n";
      if (!f1o.out.empty()) write_json(ctx.path(f1o.out), j);
    };
  });

  struct {
    std::string annotations, source = "heldout", out;
    std::vector<std::string> systems;
  } gld;
  auto* gold_cmd = eval_cmd->add_subcommand("gold", "Accuracy of label files against annotated gold");
  gold_cmd->add_option("--annotations", gld.annotations, "Annotation store")->required();
  gold_cmd->add_option("--source", gld.source, "Annotation source to score against")->capture_default_str();
  gold_cmd->add_option("--system", gld.systems, "NAME=labels.jsonl; the first is the baseline")->required();
  gold_cmd->add_option("--out", gld.out, "Report JSON");
  gold_cmd->callback([&] {
    action = [&] {
      const auto source = parse_source(gld.source);
      std::vector<AnnotationRecord> gold;
      for (auto& a : read_annotations(ctx.path(gld.annotations))) {
        if (a.source == source) gold.push_back(std::move(a));
      }
      std::vector<SystemAccuracy> systems;
      for (const auto& s : gld.systems) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ValidationError("--system expects NAME=PATH, got '" + s + "'");
        systems.push_back({s.substr(0, eq), gold_accuracy(gold, read_labels(ctx.path(s.substr(eq + 1))))});
      }
      out << render_gold_comparison(systems);
      if (!gld.out.empty()) write_json(ctx.path(gld.out), gold_comparison_json(systems));
    };
  });

  struct {
    std::string a, b, labels, out;
  } agr;
  auto* agreement_cmd = eval_cmd->add_subcommand("agreement", "Inter-annotator agreement");
  agreement_cmd->add_option("--a", agr.a, "First annotation store")->required();
  agreement_cmd->add_option("--b", agr.b, "Second annotation store")->required();
  agreement_cmd->add_option("--labels", agr.labels, "Label file to score both annotators against");
  agreement_cmd->add_option("--out", agr.out, "Report JSON");
  agreement_cmd->callback([&] {
    action = [&] {
      std::vector<LabelRecord> labels;
      if (!agr.labels.empty()) labels = read_labels(ctx.path(agr.labels));
      const auto j = to_json(agreement(read_annotations(ctx.path(agr.a)), read_annotations(ctx.path(agr.b)), labels));
      out << j.dump(2) << "\n";
      if (!agr.out.empty()) write_json(ctx.path(agr.out), j);
    };
  });

  struct {
    std::string corpus = "corpus.jsonl", rules, checkpoint = "checkpoint.json", out;
    std::size_t parallelism = 1;
    std::size_t batch_size = 64;
    std::size_t limit = 0;
  } bch;
  auto bench_action = [&] {
    auto corpus = read_corpus(ctx.path(bch.corpus));
    if (bch.limit > 0 && corpus.size() > bch.limit) corpus.resize(bch.limit);
    const CompiledRuleSet rules(load_rules(ctx.path(bch.rules)));
    const auto ckpt = load_checkpoint(ctx.path(bch.checkpoint));
    const auto j = to_json(bench(corpus, rules, ckpt.model, bch.parallelism, bch.batch_size));
    out << j.dump(2) << "\n";
    if (!bch.out.empty()) write_json(ctx.path(bch.out), j);
  };
  auto add_bench = [&](CLI::App* parent) {
    auto* cmd = parent->add_subcommand("bench", "Teacher vs student throughput");
    cmd->add_option("--corpus", bch.corpus)->capture_default_str();
    cmd->add_option("--rules", bch.rules)->required();
    cmd->add_option("--checkpoint", bch.checkpoint)->capture_default_str();
    cmd->add_option("--parallelism", bch.parallelism)->capture_default_str();
    cmd->add_option("--batch-size", bch.batch_size)->capture_default_str();
    cmd->add_option("--limit", bch.limit, "Use only the first N sentences (0 = all)")->capture_default_str();
    cmd->add_option("--out", bch.out, "Report JSON");
    cmd->callback([&] { action = bench_action; });
  };
  add_bench(eval_cmd);
  add_bench(&app);

  struct {
    std::string ref, pred, corpus, out_dir = "adjudication";
    std::size_t cap = 46;
  } dis;
  auto* disc_cmd = eval_cmd->add_subcommand("discrepancies", "Blinded adjudication queue of label disagreements");
  disc_cmd->add_option("--ref", dis.ref, "Reference labels (e.g. teacher)")->required();
  disc_cmd->add_option("--pred", dis.pred, "Predicted labels (e.g. student)")->required();
  disc_cmd->add_option("--corpus", dis.corpus, "Corpus supplying text and keys");
  disc_cmd->add_option("--cap", dis.cap, "Sentences per task")->capture_default_str();
  disc_cmd->add_option("--out-dir", dis.out_dir, "Where the queue and unblinding map go")->capture_default_str();
  disc_cmd->callback([&] {
    action = [&] {
      std::vector<SentenceRecord> corpus;
      if (!dis.corpus.empty()) corpus = read_corpus(ctx.path(dis.corpus));
      const auto q = discrepancy_sample(read_labels(ctx.path(dis.ref)), read_labels(ctx.path(dis.pred)), dis.cap,
                                        ctx.seed, corpus);
      const auto dir = ctx.path(dis.out_dir);
      fs::create_directories(dir);
      const auto items = queue_items_json(q);
      write_jsonl<json>(dir / data_files::kAdjudicationQueue, std::vector<json>(items.begin(), items.end()));
      write_json(dir / data_files::kUnblinding, unblinding_json(q));
      out << "queued " << q.items.size() << " discrepancies\n";
    };
  });

  struct {
    std::string queue_dir = "adjudication", verdicts, out;
  } tal;
  auto* tally_cmd = eval_cmd->add_subcommand("adjudication", "Unblind and tally adjudication verdicts");
  tally_cmd->add_option("--queue-dir", tal.queue_dir, "Directory holding the queue and unblinding map")
      ->capture_default_str();
  tally_cmd->add_option("--verdicts", tal.verdicts, "Adjudication store")->required();
  tally_cmd->add_option("--out", tal.out, "Report JSON");
  tally_cmd->callback([&] {
    action = [&] {
      const auto dir = ctx.path(tal.queue_dir);
      json items = json::array();
      for_each_jsonl(dir / data_files::kAdjudicationQueue, [&](const json& j, std::size_t) { items.push_back(j); });
      const auto q = queue_from_json(items, read_json(dir / data_files::kUnblinding));
      const auto tallies = tally_adjudications(q, read_jsonl<AdjudicationRecord>(ctx.path(tal.verdicts)));
      json j = json::object();
      for (std::size_t i = 0; i <= kNumTasks; ++i) {
        const auto& t = tallies[i];
        const std::string name = i < kNumTasks ? std::string(task_name(kAllTasks[i])) : "micro";
        j[name] = {{"n", t.n},
                   {"prefer_reference", t.prefer_reference},
                   {"prefer_prediction", t.prefer_prediction},
                   {"both_wrong", t.both_wrong},
                   {"unsure", t.unsure}};
      }
      out << j.dump(2) << "\n";
      if (!tal.out.empty()) write_json(ctx.path(tal.out), j);
    };
  });

  // heldout
  struct {
    std::string labels = "labels.jsonl", corpus = "corpus.jsonl", out = "heldout.jsonl", oracle,
                annotations = "annotations.jsonl", annotator = "oracle";
    std::size_t per_cell = 10;
  } hld;
  auto* heldout_cmd = app.add_subcommand("heldout", "Tiered held-out set: per_cell sentences per (task, label)");
  heldout_cmd->add_option("--labels", hld.labels, "Teacher labels")->capture_default_str();
  heldout_cmd->add_option("--corpus", hld.corpus)->capture_default_str();
  heldout_cmd->add_option("--per-cell", hld.per_cell)->capture_default_str();
  heldout_cmd->add_option("--out", hld.out, "Held-out items JSONL")->capture_default_str();
  heldout_cmd->add_option("--oracle", hld.oracle, "Gold labels; annotate the items from them");
  heldout_cmd->add_option("--annotations", hld.annotations, "Annotation store for --oracle")->capture_default_str();
  heldout_cmd->add_option("--annotator", hld.annotator, "Annotator id for --oracle")->capture_default_str();
  heldout_cmd->callback([&] {
    action = [&] {
      const auto plan = build_heldout(read_labels(ctx.path(hld.labels)), read_corpus(ctx.path(hld.corpus)),
                                      hld.per_cell, ctx.seed);
      write_jsonl<HeldoutItem>(ctx.path(hld.out), plan.items);
      for (const auto& s : plan.shortfalls) {
        err << "warning: shortfall: " << task_name(s.task) << "/" << class_name(s.label) << " has " << s.available
            << " of " << s.requested << "\n";
      }
      out << "held-out items " << plan.items.size() << "\n";
      if (!hld.oracle.empty()) {
        AnnotationStore store(ctx.path(hld.annotations));
        const auto n = oracle_annotate(std::span<const HeldoutItem>(plan.items), read_labels(ctx.path(hld.oracle)),
                                       store, hld.annotator);
        out << "annotated " << n << " held-out items\n";
      }
    };
  });

  // select
  struct {
    std::string probs = "probs.jsonl", corpus = "corpus.jsonl", out = "selection.jsonl", heldout, measure = "entropy",
                exclude_annotations, oracle, annotations = "annotations.jsonl", annotator = "oracle";
    std::size_t k = 100;
  } sel;
  auto* select_cmd = app.add_subcommand("select", "Per-task uncertainty sampling");
  select_cmd->add_option("--probs", sel.probs, "Student probabilities JSONL")->capture_default_str();
  select_cmd->add_option("--corpus", sel.corpus)->capture_default_str();
  select_cmd->add_option("--k", sel.k, "Sentences per task")->capture_default_str();
  select_cmd->add_option("--measure", sel.measure, "entropy or margin")->capture_default_str();
  select_cmd->add_option("--heldout", sel.heldout, "Held-out items to exclude");
  select_cmd->add_option("--exclude-annotations", sel.exclude_annotations, "Exclude keys already in this store");
  select_cmd->add_option("--out", sel.out, "Selection JSONL")->capture_default_str();
  select_cmd->add_option("--oracle", sel.oracle, "Gold labels; annotate the selection from them");
  select_cmd->add_option("--annotations", sel.annotations, "Annotation store for --oracle")->capture_default_str();
  select_cmd->add_option("--annotator", sel.annotator, "Annotator id for --oracle")->capture_default_str();
  select_cmd->callback([&] {
    action = [&] {
      std::unordered_set<std::string> exclude;
      if (!sel.heldout.empty()) {
        for (const auto& h : read_jsonl<HeldoutItem>(ctx.path(sel.heldout))) exclude.insert(h.dedup_key);
      }
      if (!sel.exclude_annotations.empty()) exclude.merge(annotated_keys(ctx.path(sel.exclude_annotations)));
      const auto candidates =
          join_candidates(read_jsonl<ProbabilityRecord>(ctx.path(sel.probs)), read_corpus(ctx.path(sel.corpus)));
      const auto selection = select_uncertain(candidates, sel.k, exclude, parse_measure(sel.measure));
      write_jsonl<SelectedItem>(ctx.path(sel.out), selection.items);
      out << "selected " << selection.items.size() << " sentences for " << selection.requests()
          << " task requests\n";
      if (!sel.oracle.empty()) {
        AnnotationStore store(ctx.path(sel.annotations));
        const auto n = oracle_annotate(selection, read_labels(ctx.path(sel.oracle)), store, sel.annotator);
        out << "annotated " << n << " (sentence, task) pairs\n";
      }
    };
  });

  // fine-tune
  struct {
    std::string checkpoint = "checkpoint.json", annotations = "annotations.jsonl", corpus = "corpus.jsonl",
                source = "active_round", out = "checkpoint.finetuned.json", teacher_labels;
    double mix_teacher = 0.0;
    TrainConfig tc = RoundConfig{}.train;
  } ftn;
  auto* ft_cmd = app.add_subcommand("fine-tune", "Continue training on annotations (masked loss)");
  ft_cmd->add_option("--checkpoint", ftn.checkpoint)->capture_default_str();
  ft_cmd->add_option("--annotations", ftn.annotations)->capture_default_str();
  ft_cmd->add_option("--corpus", ftn.corpus)->capture_default_str();
  ft_cmd->add_option("--source", ftn.source, "Annotation source to train on")->capture_default_str();
  ft_cmd->add_option("--out", ftn.out)->capture_default_str();
  ft_cmd->add_option("--mix-teacher", ftn.mix_teacher, "Teacher examples per annotation")->capture_default_str();
  ft_cmd->add_option("--teacher-labels", ftn.teacher_labels, "Teacher labels for --mix-teacher");
  add_train_options(ft_cmd, ftn.tc);
  ft_cmd->callback([&] {
    action = [&] {
      ftn.tc.seed = ctx.seed;
      const auto corpus = read_corpus(ctx.path(ftn.corpus));
      const auto examples =
          annotation_examples(read_annotations(ctx.path(ftn.annotations)), corpus, parse_source(ftn.source));
      std::vector<Example> teacher;
      if (ftn.mix_teacher > 0) {
        if (ftn.teacher_labels.empty()) throw ValidationError("--mix-teacher needs --teacher-labels");
        teacher = join_examples(corpus, read_labels(ctx.path(ftn.teacher_labels)));
      }
      const auto ckpt = fine_tune(load_checkpoint(ctx.path(ftn.checkpoint)), examples, ftn.tc, teacher,
                                  ftn.mix_teacher);
      save_checkpoint(ctx.path(ftn.out), ckpt);
      out << "fine-tuned on " << examples.size() << " sentences\n";
    };
  });

  // round
  struct {
    std::string labels = "labels.jsonl", checkpoint = "checkpoint.json", annotations = "annotations.jsonl",
                corpus = "corpus.jsonl", out = "checkpoint.round.json", report, pool, oracle, annotator = "oracle",
                measure = "entropy";
    std::size_t rounds = 1;
    std::size_t k = 100;
    RoundConfig rc;
  } rnd;
  auto* round_cmd = app.add_subcommand("round", "Fine-tune on active_round annotations and compare on held-out gold");
  round_cmd->add_option("--labels", rnd.labels, "Teacher labels for the corpus")->capture_default_str();
  round_cmd->add_option("--checkpoint", rnd.checkpoint, "Starting student")->capture_default_str();
  round_cmd->add_option("--annotations", rnd.annotations)->capture_default_str();
  round_cmd->add_option("--corpus", rnd.corpus)->capture_default_str();
  round_cmd->add_option("--out", rnd.out, "Fine-tuned checkpoint")->capture_default_str();
  round_cmd->add_option("--report", rnd.report, "Comparison JSON");
  round_cmd->add_option("--rounds", rnd.rounds, "Select, annotate and fine-tune this many times (needs --oracle)")
      ->capture_default_str();
  round_cmd->add_option("--pool", rnd.pool, "Corpus to select from in each round");
  round_cmd->add_option("--oracle", rnd.oracle, "Gold labels that stand in for the annotator");
  round_cmd->add_option("--annotator", rnd.annotator)->capture_default_str();
  round_cmd->add_option("--k", rnd.k, "Sentences per task per round")->capture_default_str();
  round_cmd->add_option("--measure", rnd.measure)->capture_default_str();
  round_cmd->add_option("--mix-teacher", rnd.rc.mix_teacher)->capture_default_str();
  add_train_options(round_cmd, rnd.rc.train);
  round_cmd->callback([&] {
    action = [&] {
      rnd.rc.train.seed = ctx.seed;
      if (rnd.rounds < 1) throw ValidationError("--rounds must be >= 1");
      if (rnd.rounds > 1 && rnd.oracle.empty()) throw ValidationError("--rounds above 1 needs --oracle");
      const auto corpus = read_corpus(ctx.path(rnd.corpus));
      const auto teacher = read_labels(ctx.path(rnd.labels));
      auto ckpt = load_checkpoint(ctx.path(rnd.checkpoint));
      std::optional<std::vector<SentenceRecord>> pool;
      if (!rnd.oracle.empty()) pool = read_corpus(ctx.path(rnd.pool.empty() ? rnd.corpus : rnd.pool));
      json reports = json::array();
      for (std::size_t r = 0; r < rnd.rounds; ++r) {
        if (pool) {
          AnnotationStore store(ctx.path(rnd.annotations));
          std::unordered_set<std::string> exclude;
          for (const auto& a : store.records()) exclude.insert(a.dedup_key);
          const auto probs = predict_corpus(*pool, ckpt.model, rnd.rc.batch_size).probabilities;
          const auto selection =
              select_uncertain(join_candidates(probs, *pool), rnd.k, exclude, parse_measure(rnd.measure));
          const auto n = oracle_annotate(selection, read_labels(ctx.path(rnd.oracle)), store, rnd.annotator);
          out << "round " << r + 1 << ": annotated " << n << " (sentence, task) pairs\n";
        }
        auto result = run_round(teacher, ckpt, read_annotations(ctx.path(rnd.annotations)), corpus, rnd.rc);
        out << render_gold_comparison(result.comparison);
        auto j = gold_comparison_json(result.comparison);
        j["round"] = r + 1;
        j["training_examples"] = result.training_examples;
        j["training_pairs"] = result.training_pairs;
        reports.push_back(j);
        ckpt = std::move(result.checkpoint);
      }
      save_checkpoint(ctx.path(rnd.out), ckpt);
      if (!rnd.report.empty()) write_json(ctx.path(rnd.report), rnd.rounds == 1 ? reports[0] : reports);
    };
  });

  // serve
  struct {
    int port = 8675;
    std::string host = "127.0.0.1", checkpoint, rules, ui_dir;
  } srv;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP annotation service under /api/v1");
  serve_cmd->add_option("--port", srv.port)->capture_default_str();
  serve_cmd->add_option("--host", srv.host)->capture_default_str();
  serve_cmd->add_option("--checkpoint", srv.checkpoint, "Student checkpoint");
  serve_cmd->add_option("--rules", srv.rules, "Rule set for teacher labels");
  serve_cmd->add_option("--ui-dir", srv.ui_dir, "Static UI bundle served at /");
  serve_cmd->callback([&] {
    action = [&] {
      ServiceConfig config;
      config.data_dir = ctx.data_dir;
      if (!srv.checkpoint.empty()) config.checkpoint = ctx.path(srv.checkpoint);
      if (!srv.rules.empty()) config.rules = ctx.path(srv.rules);
      if (!srv.ui_dir.empty()) config.ui_dir = ctx.path(srv.ui_dir);
      config.round.train.seed = ctx.seed;
      Service service(std::move(config));
      const int port = service.bind(srv.host, srv.port);
      out << "listening on http://" << srv.host << ":" << port << "\n" << std::flush;
      service.serve();
    };
  });

  std::vector<std::string> argv_store{"silverloop"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    // help for the innermost subcommand the user named
    const CLI::App* target = &app;
    for (bool descended = true; descended;) {
      descended = false;
      for (const auto* sub : target->get_subcommands()) {
        target = sub;
        descended = true;
        break;
      }
    }
    err << "error: usage: " << e.what() << "\n" << target->help();
    return 2;
  }

  ctx.data_dir = data_dir;
  try {
    if (action) action();
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.kind() << ": " << e.what() << "\n";
  } catch (const json::exception& e) {
    err << "error: parse: " << e.what() << "\n";
  } catch (const fs::filesystem_error& e) {
    err << "error: io: " << e.what() << "\n";
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << "\n";
  }
  return 1;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace silverloop
