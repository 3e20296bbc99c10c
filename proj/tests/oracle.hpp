#pragma once

// Brute-force reference for the cue-window labeler. Shares no code with the
// library beyond the core types.

#include <algorithm>
#include <string>
#include <vector>

#include "silverloop/core.hpp"
#include "silverloop/io.hpp"
#include "silverloop/rule_labeler.hpp"

namespace oracle {

using silverloop::MentionClass;
using silverloop::TaskId;

inline std::vector<std::string> split_tokens(const std::string& text) {
  // First pass marks token boundaries per byte, second pass cuts.
  const std::size_t n = text.size();
  auto ch = [&](std::size_t i) { return static_cast<unsigned char>(text[i]); };
  auto digit = [&](std::size_t i) { return i < n && ch(i) >= '0' && ch(i) <= '9'; };
  auto space = [&](std::size_t i) { return ch(i) == ' ' || (ch(i) >= '\t' && ch(i) <= '\r'); };
  auto punct = [&](std::size_t i) {
    unsigned char c = ch(i);
    bool p = (c >= '!' && c <= '/') || (c >= ':' && c <= '@') || (c >= '[' && c <= '`') || (c >= '{' && c <= '~');
    if (p && c == '.' && i > 0 && digit(i - 1) && digit(i + 1)) return false;
    return p;
  };
  std::vector<std::string> out;
  std::string cur;
  for (std::size_t i = 0; i < n; ++i) {
    if (space(i)) {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (punct(i)) {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
      out.push_back(std::string(1, text[i]));
    } else {
      char c = text[i];
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

struct Occurrence {
  std::size_t start;
  std::size_t len;
};

inline std::vector<Occurrence> occurrences(const std::vector<std::string>& toks, const std::vector<std::string>& phrase) {
  std::vector<Occurrence> out;
  if (phrase.empty() || phrase.size() > toks.size()) return out;
  for (std::size_t s = 0; s + phrase.size() <= toks.size(); ++s) {
    bool ok = true;
    for (std::size_t k = 0; k < phrase.size() && ok; ++k) ok = toks[s + k] == phrase[k];
    if (ok) out.push_back({s, phrase.size()});
  }
  return out;
}

struct Hit {
  TaskId task;
  std::size_t start;
  std::size_t end;
  MentionClass cls;
};

struct Result {
  std::array<MentionClass, silverloop::kNumTasks> labels{};
  std::vector<Hit> hits;
};

inline Result classify(const std::string& text, const silverloop::RuleSet& rules) {
  const auto toks = split_tokens(text);
  std::vector<std::string> breakers;
  for (const auto& b : rules.scope_breakers) {
    for (const auto& t : split_tokens(b)) breakers.push_back(t);
  }
  auto is_breaker = [&](const std::string& t) {
    return std::find(breakers.begin(), breakers.end(), t) != breakers.end();
  };

  enum Kind { pre, post, unc };
  struct CueOcc {
    std::size_t start, end;
    Kind kind;
  };
  std::vector<CueOcc> cues;
  auto add_cues = [&](const std::vector<std::string>& list, Kind k) {
    for (const auto& c : list) {
      for (auto o : occurrences(toks, split_tokens(c))) cues.push_back({o.start, o.start + o.len, k});
    }
  };
  add_cues(rules.negation_pre_cues, pre);
  add_cues(rules.negation_post_cues, post);
  add_cues(rules.uncertainty_cues, unc);

  // Enumerate every (cue, mention) pair by distance.
  auto resolve = [&](std::size_t ms, std::size_t me) {
    bool any_unc = false, any_neg = false;
    for (const auto& c : cues) {
      bool before = c.end <= ms, after = c.start >= me;
      if (!before && !after) continue;
      std::size_t lo = before ? c.end : me;
      std::size_t hi = before ? ms : c.start;
      if (hi - lo > static_cast<std::size_t>(rules.window)) continue;
      bool blocked = false;
      for (std::size_t k = lo; k < hi; ++k) blocked = blocked || is_breaker(toks[k]);
      if (blocked) continue;
      if (c.kind == unc) any_unc = true;
      if (c.kind == pre && before) any_neg = true;
      if (c.kind == post && after) any_neg = true;
    }
    if (any_unc) return MentionClass::uncertain;
    if (any_neg) return MentionClass::negative;
    return MentionClass::positive;
  };

  Result r;
  r.labels.fill(MentionClass::no_mention);
  for (TaskId t : silverloop::kAllTasks) {
    std::vector<Occurrence> all;
    for (const auto& p : rules.mention_phrases[silverloop::index_of(t)]) {
      for (auto o : occurrences(toks, split_tokens(p))) all.push_back(o);
    }
    std::sort(all.begin(), all.end(), [](const Occurrence& a, const Occurrence& b) {
      return a.start != b.start ? a.start < b.start : a.len > b.len;
    });
    std::size_t covered = 0;
    for (const auto& o : all) {
      if (o.start < covered) continue;
      covered = o.start + o.len;
      MentionClass c = resolve(o.start, covered);
      r.hits.push_back({t, o.start, covered, c});
      // positive > uncertain > negative
      auto rank = [](MentionClass m) {
        switch (m) {
          case MentionClass::positive: return 3;
          case MentionClass::uncertain: return 2;
          case MentionClass::negative: return 1;
          default: return 0;
        }
      };
      auto& cur = r.labels[silverloop::index_of(t)];
      if (rank(c) > rank(cur)) cur = c;
    }
  }
  bool any_finding = false;
  for (TaskId t : silverloop::kAllTasks) {
    if (t == TaskId::no_finding) continue;
    auto c = r.labels[silverloop::index_of(t)];
    any_finding = any_finding || c == MentionClass::uncertain || c == MentionClass::positive;
  }
  r.labels[silverloop::index_of(TaskId::no_finding)] = any_finding ? MentionClass::negative : MentionClass::positive;
  return r;
}

// Random small rule sets over a tiny vocabulary so phrases, cues and breakers
// collide often.
inline const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> v = {"a", "b", "c", "d", "e", "no", "not", "may", "be", ".", ";", ",",
                                             "but", "however", "x", "y"};
  return v;
}

inline std::string random_phrase(silverloop::Rng& rng, bool words_only) {
  const auto& v = vocabulary();
  std::string out;
  std::size_t len = 1 + rng.below(2);
  for (std::size_t i = 0; i < len; ++i) {
    std::string w;
    do {
      w = v[rng.below(v.size())];
    } while (words_only && (w == "." || w == ";" || w == ","));
    if (!out.empty()) out += " ";
    out += w;
  }
  return out;
}

inline silverloop::RuleSet random_rules(silverloop::Rng& rng) {
  silverloop::RuleSet r;
  r.version = "random";
  r.window = 1 + static_cast<int>(rng.below(5));
  auto fill = [&](std::vector<std::string>& list, std::size_t max) {
    std::size_t n = rng.below(max + 1);
    for (std::size_t i = 0; i < n; ++i) {
      auto p = random_phrase(rng, true);
      if (std::find(list.begin(), list.end(), p) == list.end()) list.push_back(p);
    }
  };
  fill(r.negation_pre_cues, 3);
  fill(r.negation_post_cues, 3);
  fill(r.uncertainty_cues, 3);
  for (TaskId t : silverloop::kAllTasks) {
    if (t == TaskId::no_finding) continue;
    auto& list = r.mention_phrases[silverloop::index_of(t)];
    if (rng.bernoulli(0.25)) {
      std::size_t n = 1 + rng.below(3);
      for (std::size_t i = 0; i < n; ++i) {
        auto p = random_phrase(rng, true);
        if (std::find(list.begin(), list.end(), p) == list.end()) list.push_back(p);
      }
    } else {
      list.push_back("zz" + std::to_string(silverloop::index_of(t)));
    }
  }
  if (rng.bernoulli(0.2)) r.scope_breakers = {";"};
  return r;
}

inline std::string random_sentence(silverloop::Rng& rng) {
  const auto& v = vocabulary();
  std::string out;
  std::size_t len = rng.below(13);
  for (std::size_t i = 0; i < len; ++i) {
    std::string w = v[rng.below(v.size())];
    if (rng.bernoulli(0.1)) w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
    if (!out.empty() && !rng.bernoulli(0.1)) out += " ";
    out += w;
  }
  return out;
}

}  // namespace oracle
