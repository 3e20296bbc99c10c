#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "silverloop/core.hpp"
#include "silverloop/io.hpp"

namespace silverloop {

// A sentence pattern. Slots: {finding} and {finding2} bind distinct finding
// tasks; {size} and {side} are filled from fixed modifier lists. `effects`
// holds the gold class of each finding slot in slot order.
struct Template {
  std::string text;
  std::vector<MentionClass> effects;
  double weight = 1.0;
};

struct NoiseConfig {
  double typo_rate = 0.0;
  double synonym_swap_rate = 0.0;
  // Cue words are spared by default; enabling this manufactures teacher errors.
  bool typos_in_cues = false;
  // Rate for cue words when typos_in_cues is set; typo_rate when absent.
  std::optional<double> cue_typo_rate;
};

struct GeneratorConfig {
  std::size_t n_reports = 100;
  std::size_t min_sentences = 3;
  std::size_t max_sentences = 7;
  std::vector<Template> template_bank;
  // Per task surface forms; the first entry is the canonical phrase used
  // unless a synonym swap fires.
  std::array<std::vector<std::string>, kNumTasks> surface_forms;
  std::vector<std::string> cue_words;
  NoiseConfig noise;
  std::uint64_t seed = 1;

  void validate() const;

  // Template bank and lexicon co-designed with rules/fixture.json and
  // rules/default.json: noise-free output is labeled exactly by both.
  static GeneratorConfig defaults();
};

GeneratorConfig generator_config_from_json(const json& j);
json generator_config_to_json(const GeneratorConfig& config);

struct GeneratedCorpus {
  std::vector<SentenceRecord> sentences;
  std::vector<LabelRecord> gold;
};

GeneratedCorpus generate(const GeneratorConfig& config);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct SplitManifest {
  std::vector<std::string> train_report_ids;
  std::vector<std::string> val_report_ids;
  std::vector<std::string> test_report_ids;
  // Keys of test sentences never seen in a train report.
  std::vector<std::string> unseen_test_keys;
};

void to_json(json& j, const SplitManifest& m);
void from_json(const json& j, SplitManifest& m);

SplitManifest split(std::span<const SentenceRecord> corpus, SplitFractions fractions, std::uint64_t seed);

enum class IngestFormat { jsonl, csv };

IngestFormat parse_ingest_format(std::string_view name);

// Sentence boundary: '.', '?' or '!' followed by whitespace.
std::vector<std::string> split_sentences(std::string_view text);

// Rows without a sentence_index are split into sentences and numbered per
// report in file order. Errors name the offending 1-based line.
std::vector<SentenceRecord> ingest(const fs::path& path, IngestFormat format);

}  // namespace silverloop
