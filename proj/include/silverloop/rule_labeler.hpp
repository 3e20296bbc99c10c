#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "silverloop/core.hpp"
#include "silverloop/io.hpp"

namespace silverloop {

// Lowercases, isolates every ASCII punctuation character as its own token
// (a '.' between two digits stays inside the number) and splits on
// whitespace. Bytes >= 0x80 are word characters.
std::vector<std::string> tokenize(std::string_view text);

// The teacher's rule tables. Phrases are matched on token sequences produced
// by tokenize(), so "s/p" is the three tokens "s", "/", "p".
struct RuleSet {
  std::string version;
  int window = 5;
  std::vector<std::string> negation_pre_cues;
  std::vector<std::string> negation_post_cues;
  std::vector<std::string> uncertainty_cues;
  std::array<std::vector<std::string>, kNumTasks> mention_phrases;
  // A cue never reaches a mention across one of these tokens.
  std::vector<std::string> scope_breakers = default_scope_breakers();

  static std::vector<std::string> default_scope_breakers();

  // Throws ValidationError on an empty lexicon, window < 1, or an empty or
  // non-lowercase phrase.
  void validate() const;
};

RuleSet rules_from_json(const json& j);
json rules_to_json(const RuleSet& rules);
RuleSet load_rules(const fs::path& path);

struct TokenSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

struct MentionHit {
  TaskId task;
  std::string phrase;
  TokenSpan span;
  MentionClass resolved;
  friend bool operator==(const MentionHit&, const MentionHit&) = default;
};

struct Classification {
  LabelVector labels;
  std::vector<MentionHit> hits;
};

// Phrases pre-tokenized and indexed by first token. Immutable once built and
// safe to share across threads.
class CompiledRuleSet {
 public:
  explicit CompiledRuleSet(RuleSet rules);

  Classification classify(std::string_view text) const;
  const RuleSet& rules() const { return rules_; }

 private:
  using Phrase = std::vector<std::string>;
  struct Cue {
    Phrase tokens;
    enum Kind { pre_negation, post_negation, uncertainty } kind;
  };

  RuleSet rules_;
  std::array<std::vector<std::pair<Phrase, std::string>>, kNumTasks> mentions_;
  std::vector<Cue> cues_;
  std::vector<std::string> breakers_;
};

Classification classify_sentence(std::string_view text, const RuleSet& rules);

struct LabelingStats {
  std::size_t sentences = 0;
  double seconds = 0.0;
  double sentences_per_second = 0.0;
};

// Output order matches input order for any parallelism.
std::vector<LabelRecord> classify_corpus(std::span<const SentenceRecord> corpus, const CompiledRuleSet& rules,
                                         std::size_t parallelism, LabelingStats* stats = nullptr);

// Streams a corpus file to a labels file.
LabelingStats classify_corpus_file(const fs::path& corpus, const CompiledRuleSet& rules, std::size_t parallelism,
                                   const fs::path& out);

// Report-level merge: positive > uncertain > negative > no_mention per task,
// then no_finding recomputed. Throws PreconditionError on an empty list.
LabelVector aggregate_report(std::span<const LabelVector> sentence_labels);

}  // namespace silverloop
