#include "silverloop/rule_labeler.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <thread>

#include "silverloop/error.hpp"

namespace silverloop {
namespace {

bool is_space(unsigned char c) { return std::isspace(c) != 0; }

bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; }

bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }

void check_phrases(const std::vector<std::string>& phrases, const std::string& where) {
  for (const auto& p : phrases) {
    if (p.empty() || tokenize(p).empty()) throw ValidationError(where + ": empty phrase");
    for (char c : p) {
      if (std::isupper(static_cast<unsigned char>(c))) {
        throw ValidationError(where + ": phrase '" + p + "' is not lowercase");
      }
    }
  }
}

std::vector<std::string> string_list(const json& j, const char* key) {
  if (!j.contains(key)) throw ValidationError(std::string("rule file missing '") + key + "'");
  return j.at(key).get<std::vector<std::string>>();
}

bool matches_at(const std::vector<std::string>& tokens, std::size_t pos, const std::vector<std::string>& phrase) {
  if (pos + phrase.size() > tokens.size()) return false;
  return std::equal(phrase.begin(), phrase.end(), tokens.begin() + static_cast<std::ptrdiff_t>(pos));
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      flush();
    } else if (is_punct(c)) {
      const bool decimal_point = c == '.' && !current.empty() && is_digit(static_cast<unsigned char>(current.back())) &&
                                 i + 1 < text.size() && is_digit(static_cast<unsigned char>(text[i + 1]));
      if (decimal_point) {
        current.push_back('.');
        continue;
      }
      flush();
      tokens.emplace_back(1, static_cast<char>(c));
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return tokens;
}

std::vector<std::string> RuleSet::default_scope_breakers() { return {".", ";", ":", "but", "however"}; }

void RuleSet::validate() const {
  if (window < 1) throw ValidationError("window must be >= 1, got " + std::to_string(window));
  for (TaskId t : kAllTasks) {
    const auto& phrases = mention_phrases[index_of(t)];
    const std::string where = "mention_phrases." + std::string(task_name(t));
    if (t == TaskId::no_finding) {
      if (!phrases.empty()) throw ValidationError(where + ": no_finding is derived and takes no phrases");
      continue;
    }
    if (phrases.empty()) throw ValidationError(where + ": lexicon is empty");
    check_phrases(phrases, where);
  }
  check_phrases(negation_pre_cues, "negation_pre_cues");
  check_phrases(negation_post_cues, "negation_post_cues");
  check_phrases(uncertainty_cues, "uncertainty_cues");
  check_phrases(scope_breakers, "scope_breakers");
}

RuleSet rules_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("rule file must be a JSON object");
  RuleSet r;
  try {
    r.version = j.at("version").get<std::string>();
    r.window = j.at("window").get<int>();
    r.negation_pre_cues = string_list(j, "negation_pre_cues");
    r.negation_post_cues = string_list(j, "negation_post_cues");
    r.uncertainty_cues = string_list(j, "uncertainty_cues");
    if (j.contains("scope_breakers")) r.scope_breakers = string_list(j, "scope_breakers");
    const auto& mentions = j.at("mention_phrases");
    if (!mentions.is_object()) throw ParseError("mention_phrases must be an object");
    for (const auto& [name, phrases] : mentions.items()) {
      r.mention_phrases[index_of(task_from_name(name))] = phrases.get<std::vector<std::string>>();
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("rule file: ") + e.what());
  }
  r.validate();
  return r;
}

json rules_to_json(const RuleSet& rules) {
  json mentions = json::object();
  for (TaskId t : kAllTasks) {
    if (t == TaskId::no_finding) continue;
    mentions[std::string(task_name(t))] = rules.mention_phrases[index_of(t)];
  }
  return json{{"version", rules.version},
              {"window", rules.window},
              {"negation_pre_cues", rules.negation_pre_cues},
              {"negation_post_cues", rules.negation_post_cues},
              {"uncertainty_cues", rules.uncertainty_cues},
              {"scope_breakers", rules.scope_breakers},
              {"mention_phrases", mentions}};
}

RuleSet load_rules(const fs::path& path) { return rules_from_json(read_json(path)); }

CompiledRuleSet::CompiledRuleSet(RuleSet rules) : rules_(std::move(rules)) {
  rules_.validate();
  for (TaskId t : kAllTasks) {
    auto& compiled = mentions_[index_of(t)];
    for (const auto& p : rules_.mention_phrases[index_of(t)]) compiled.emplace_back(tokenize(p), p);
    // Longest first so the first match at a position is the longest one.
    std::stable_sort(compiled.begin(), compiled.end(),
                     [](const auto& a, const auto& b) { return a.first.size() > b.first.size(); });
  }
  for (const auto& c : rules_.negation_pre_cues) cues_.push_back({tokenize(c), Cue::pre_negation});
  for (const auto& c : rules_.negation_post_cues) cues_.push_back({tokenize(c), Cue::post_negation});
  for (const auto& c : rules_.uncertainty_cues) cues_.push_back({tokenize(c), Cue::uncertainty});
  for (const auto& b : rules_.scope_breakers) {
    for (auto& tok : tokenize(b)) breakers_.push_back(std::move(tok));
  }
}

Classification CompiledRuleSet::classify(std::string_view text) const {
  const auto tokens = tokenize(text);

  std::vector<bool> breaker(tokens.size() + 1, false);
  std::vector<std::size_t> breakers_before(tokens.size() + 1, 0);  // prefix counts
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    breaker[i] = std::find(breakers_.begin(), breakers_.end(), tokens[i]) != breakers_.end();
    breakers_before[i + 1] = breakers_before[i] + (breaker[i] ? 1 : 0);
  }
  auto clear_between = [&](std::size_t from, std::size_t to) { return breakers_before[to] == breakers_before[from]; };

  struct CueMatch {
    TokenSpan span;
    Cue::Kind kind;
  };
  std::vector<CueMatch> cue_matches;
  for (const auto& cue : cues_) {
    for (std::size_t i = 0; i + cue.tokens.size() <= tokens.size(); ++i) {
      if (matches_at(tokens, i, cue.tokens)) cue_matches.push_back({{i, i + cue.tokens.size()}, cue.kind});
    }
  }

  const auto window = static_cast<std::size_t>(rules_.window);
  auto resolve = [&](TokenSpan m) {
    bool negated = false;
    for (const auto& c : cue_matches) {
      const bool before = c.span.end <= m.start;
      const bool after = c.span.start >= m.end;
      if (!before && !after) continue;  // overlaps the mention
      const std::size_t gap = before ? m.start - c.span.end : c.span.start - m.end;
      if (gap > window) continue;
      if (!(before ? clear_between(c.span.end, m.start) : clear_between(m.end, c.span.start))) continue;
      switch (c.kind) {
        case Cue::uncertainty:
          return MentionClass::uncertain;
        case Cue::pre_negation:
          negated = negated || before;
          break;
        case Cue::post_negation:
          negated = negated || after;
          break;
      }
    }
    return negated ? MentionClass::negative : MentionClass::positive;
  };

  Classification out;
  std::array<MentionClass, kNumTasks> labels{};
  labels.fill(MentionClass::no_mention);
  for (TaskId t : kAllTasks) {
    const auto& phrases = mentions_[index_of(t)];
    if (phrases.empty()) continue;
    std::size_t i = 0;
    while (i < tokens.size()) {
      const std::pair<std::vector<std::string>, std::string>* found = nullptr;
      for (const auto& p : phrases) {
        if (matches_at(tokens, i, p.first)) {
          found = &p;
          break;
        }
      }
      if (found == nullptr) {
        ++i;
        continue;
      }
      TokenSpan span{i, i + found->first.size()};
      MentionClass cls = resolve(span);
      out.hits.push_back({t, found->second, span, cls});
      labels[index_of(t)] = std::max(labels[index_of(t)], cls);
      i = span.end;
    }
  }
  out.labels = LabelVector::with_derived_no_finding(labels);
  return out;
}

Classification classify_sentence(std::string_view text, const RuleSet& rules) {
  return CompiledRuleSet(rules).classify(text);
}

std::vector<LabelRecord> classify_corpus(std::span<const SentenceRecord> corpus, const CompiledRuleSet& rules,
                                         std::size_t parallelism, LabelingStats* stats) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<LabelRecord> out(corpus.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      out[i] = {corpus[i].report_id, corpus[i].sentence_index, rules.classify(corpus[i].text).labels};
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(parallelism, corpus.size()));
  if (workers <= 1) {
    work(0, corpus.size());
  } else {
    std::vector<std::jthread> threads;
    const std::size_t chunk = (corpus.size() + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(corpus.size(), begin + chunk);
      if (begin < end) threads.emplace_back(work, begin, end);
    }
  }
  if (stats != nullptr) {
    stats->sentences = corpus.size();
    stats->seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    stats->sentences_per_second =
        stats->seconds > 0 ? static_cast<double>(corpus.size()) / stats->seconds : static_cast<double>(corpus.size());
  }
  return out;
}

LabelingStats classify_corpus_file(const fs::path& corpus, const CompiledRuleSet& rules, std::size_t parallelism,
                                   const fs::path& out) {
  const auto records = read_corpus(corpus);
  LabelingStats stats;
  const auto labels = classify_corpus(records, rules, parallelism, &stats);
  write_labels(out, labels);
  return stats;
}

LabelVector aggregate_report(std::span<const LabelVector> sentence_labels) {
  if (sentence_labels.empty()) throw PreconditionError("aggregate_report needs at least one sentence");
  std::array<MentionClass, kNumTasks> merged{};
  merged.fill(MentionClass::no_mention);
  for (const auto& v : sentence_labels) {
    for (TaskId t : kAllTasks) merged[index_of(t)] = std::max(merged[index_of(t)], v[t]);
  }
  return LabelVector::with_derived_no_finding(merged);
}

}  // namespace silverloop
