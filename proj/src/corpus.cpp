#include "silverloop/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <unordered_set>

#include "silverloop/error.hpp"

namespace silverloop {
namespace {

using C = MentionClass;

const std::vector<std::string> kSizes = {"small", "moderate", "large", "mild"};
const std::vector<std::string> kSides = {"left", "right", "bilateral"};

constexpr std::string_view kSlot1 = "{finding}";
constexpr std::string_view kSlot2 = "{finding2}";

std::size_t count_finding_slots(const std::string& text) {
  std::size_t n = 0;
  if (text.find(kSlot1) != std::string::npos) ++n;
  if (text.find(kSlot2) != std::string::npos) ++n;
  return n;
}

void replace_all(std::string& s, std::string_view from, const std::string& to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }

// Perturbs the alphabetic run of `word` with one of: adjacent swap, deletion,
// duplication. Always changes the word when it has at least one letter.
std::string typo(const std::string& word, Rng& rng) {
  std::size_t begin = 0;
  while (begin < word.size() && !is_alpha(word[begin])) ++begin;
  std::size_t end = begin;
  while (end < word.size() && is_alpha(word[end])) ++end;
  if (begin == end) return word;
  std::string core = word.substr(begin, end - begin);
  const std::size_t n = core.size();
  for (;;) {
    const auto op = rng.below(3);
    if (op == 0 && n >= 2) {
      const auto i = static_cast<std::size_t>(rng.below(n - 1));
      if (core[i] == core[i + 1]) continue;
      std::swap(core[i], core[i + 1]);
    } else if (op == 1 && n >= 2) {
      core.erase(static_cast<std::size_t>(rng.below(n)), 1);
    } else if (op == 2) {
      const auto i = static_cast<std::size_t>(rng.below(n));
      core.insert(i, 1, core[i]);
    } else {
      continue;
    }
    break;
  }
  return word.substr(0, begin) + core + word.substr(end);
}

std::string weighted_pick_text(const std::vector<std::string>& options, Rng& rng) {
  return options[static_cast<std::size_t>(rng.below(options.size()))];
}

std::string report_id_for(std::size_t i) {
  std::string digits = std::to_string(i);
  return "R" + std::string(digits.size() < 6 ? 6 - digits.size() : 0, '0') + digits;
}

}  // namespace

void GeneratorConfig::validate() const {
  if (n_reports < 1) throw ValidationError("n_reports must be >= 1");
  if (min_sentences < 1 || min_sentences > max_sentences) {
    throw ValidationError("sentences_per_report range must satisfy 1 <= min <= max");
  }
  if (template_bank.empty()) throw ValidationError("template bank is empty");
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError(std::string(name) + " must lie in [0, 1]");
  };
  prob(noise.typo_rate, "typo_rate");
  prob(noise.synonym_swap_rate, "synonym_swap_rate");
  if (noise.cue_typo_rate) prob(*noise.cue_typo_rate, "cue_typo_rate");
  double total_weight = 0;
  for (const auto& t : template_bank) {
    if (count_finding_slots(t.text) != t.effects.size()) {
      throw ValidationError("template '" + t.text + "' declares " + std::to_string(t.effects.size()) +
                            " effects for " + std::to_string(count_finding_slots(t.text)) + " finding slots");
    }
    if (t.effects.size() == 1 && t.text.find(kSlot1) == std::string::npos) {
      throw ValidationError("template '" + t.text + "' uses {finding2} without {finding}");
    }
    for (auto e : t.effects) {
      if (e == C::no_mention) throw ValidationError("template '" + t.text + "' declares a no_mention effect");
    }
    if (!(t.weight >= 0)) throw ValidationError("template weight must be >= 0");
    total_weight += t.weight;
  }
  if (!(total_weight > 0)) throw ValidationError("template weights sum to zero");
  for (TaskId t : kAllTasks) {
    if (t == TaskId::no_finding) continue;
    if (surface_forms[index_of(t)].empty()) {
      throw ValidationError("no surface form for task " + std::string(task_name(t)));
    }
  }
}

GeneratorConfig GeneratorConfig::defaults() {
  GeneratorConfig c;
  c.template_bank = {
      {"There is a {size} {side} {finding}.", {C::positive}},
      {"{finding} is present.", {C::positive}},
      {"Stable {finding}.", {C::positive}},
      {"Findings are consistent with {finding}.", {C::positive}},
      {"Interval increase in {finding}.", {C::positive}},
      {"No {finding}.", {C::negative}},
      {"There is no {finding}.", {C::negative}},
      {"No evidence of {finding}.", {C::negative}},
      {"The lungs are clear without {finding}.", {C::negative}},
      {"{finding} has resolved.", {C::negative}},
      {"Possible {finding}.", {C::uncertain}},
      {"Possible early {finding}.", {C::uncertain}},
      {"Cannot exclude {finding}.", {C::uncertain}},
      {"Findings may represent {finding}.", {C::uncertain}},
      {"No {finding} or {finding2}.", {C::negative, C::negative}},
      {"{finding} is present; no {finding2}.", {C::positive, C::negative}},
      {"Findings may represent {finding}; no {finding2}.", {C::uncertain, C::negative}},
      {"There is a {size} {finding} without {finding2}.", {C::positive, C::negative}},
      {"Possible {finding} and {finding2}.", {C::uncertain, C::uncertain}},
      {"{finding} and {finding2} are seen.", {C::positive, C::positive}},
      {"The lungs are clear.", {}},
      {"Heart size is normal.", {}},
      {"Comparison is made to the prior study.", {}},
      {"The osseous structures are intact.", {}},
      {"Frontal and lateral views of the chest were obtained.", {}},
      {"Mediastinal contours are unremarkable.", {}},
      {"No acute cardiopulmonary process.", {}},
      {"There is no change from the prior examination.", {}},
  };
  auto set = [&](TaskId t, std::vector<std::string> forms) { c.surface_forms[index_of(t)] = std::move(forms); };
  set(TaskId::enlarged_cardiomediastinum, {"enlarged cardiomediastinum", "widened mediastinum", "mediastinal widening"});
  set(TaskId::cardiomegaly, {"cardiomegaly", "enlarged heart", "cardiac enlargement"});
  set(TaskId::lung_lesion, {"lung nodule", "pulmonary nodule", "lung mass"});
  set(TaskId::airspace_opacity, {"airspace opacity", "opacification", "infiltrate"});
  set(TaskId::edema, {"edema", "vascular congestion", "fluid overload"});
  set(TaskId::consolidation, {"consolidation", "consolidative change"});
  set(TaskId::pneumonia, {"pneumonia", "infectious process", "aspiration"});
  set(TaskId::atelectasis, {"atelectasis", "volume loss", "collapse"});
  set(TaskId::pneumothorax, {"pneumothorax", "pneumothoraces", "ptx"});
  set(TaskId::pleural_effusion, {"pleural effusion", "effusion", "pleural fluid"});
  set(TaskId::pleural_other, {"pleural thickening", "pleural plaque", "fibrothorax"});
  set(TaskId::fracture, {"fracture", "fractures", "osseous injury"});
  set(TaskId::support_devices, {"endotracheal tube", "picc line", "pacemaker"});
  c.cue_words = {"no", "without", "evidence", "of", "possible", "cannot", "exclude",
                 "may", "represent", "has", "resolved"};
  return c;
}

GeneratorConfig generator_config_from_json(const json& j) {
  GeneratorConfig c = GeneratorConfig::defaults();
  try {
    if (j.contains("n_reports")) c.n_reports = j.at("n_reports").get<std::size_t>();
    if (j.contains("sentences_per_report")) {
      const auto& r = j.at("sentences_per_report");
      c.min_sentences = r.at(0).get<std::size_t>();
      c.max_sentences = r.at(1).get<std::size_t>();
    }
    if (j.contains("template_bank")) {
      c.template_bank.clear();
      for (const auto& t : j.at("template_bank")) {
        Template tpl;
        tpl.text = t.at("text").get<std::string>();
        for (const auto& e : t.value("effects", json::array())) tpl.effects.push_back(e.get<MentionClass>());
        tpl.weight = t.value("weight", 1.0);
        c.template_bank.push_back(std::move(tpl));
      }
    }
    if (j.contains("surface_forms")) {
      for (const auto& [name, forms] : j.at("surface_forms").items()) {
        c.surface_forms[index_of(task_from_name(name))] = forms.get<std::vector<std::string>>();
      }
    }
    if (j.contains("cue_words")) c.cue_words = j.at("cue_words").get<std::vector<std::string>>();
    if (j.contains("noise")) {
      const auto& n = j.at("noise");
      c.noise.typo_rate = n.value("typo_rate", c.noise.typo_rate);
      c.noise.synonym_swap_rate = n.value("synonym_swap_rate", c.noise.synonym_swap_rate);
      c.noise.typos_in_cues = n.value("typos_in_cues", c.noise.typos_in_cues);
      if (n.contains("cue_typo_rate")) c.noise.cue_typo_rate = n.at("cue_typo_rate").get<double>();
    }
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("generator config: ") + e.what());
  }
  c.validate();
  return c;
}

json generator_config_to_json(const GeneratorConfig& c) {
  json bank = json::array();
  for (const auto& t : c.template_bank) bank.push_back({{"text", t.text}, {"effects", t.effects}, {"weight", t.weight}});
  json forms = json::object();
  for (TaskId t : kAllTasks) {
    if (t != TaskId::no_finding) forms[std::string(task_name(t))] = c.surface_forms[index_of(t)];
  }
  json noise{{"typo_rate", c.noise.typo_rate},
             {"synonym_swap_rate", c.noise.synonym_swap_rate},
             {"typos_in_cues", c.noise.typos_in_cues}};
  if (c.noise.cue_typo_rate) noise["cue_typo_rate"] = *c.noise.cue_typo_rate;
  return json{{"n_reports", c.n_reports},
              {"sentences_per_report", {c.min_sentences, c.max_sentences}},
              {"template_bank", bank},
              {"surface_forms", forms},
              {"cue_words", c.cue_words},
              {"noise", noise},
              {"seed", c.seed}};
}

GeneratedCorpus generate(const GeneratorConfig& config) {
  config.validate();
  Rng rng(config.seed);
  std::vector<TaskId> finding_tasks;
  for (TaskId t : kAllTasks) {
    if (t != TaskId::no_finding) finding_tasks.push_back(t);
  }
  std::unordered_set<std::string> cue_words;
  for (const auto& w : config.cue_words) cue_words.insert(lower(w));

  double total_weight = 0;
  for (const auto& t : config.template_bank) total_weight += t.weight;
  auto pick_template = [&]() -> const Template& {
    double x = rng.unit() * total_weight;
    for (const auto& t : config.template_bank) {
      if (x < t.weight) return t;
      x -= t.weight;
    }
    return config.template_bank.back();
  };

  GeneratedCorpus out;
  for (std::size_t r = 0; r < config.n_reports; ++r) {
    const std::string report_id = report_id_for(r);
    const std::size_t span = config.max_sentences - config.min_sentences + 1;
    const std::size_t n_sentences = config.min_sentences + static_cast<std::size_t>(rng.below(span));
    for (std::size_t s = 0; s < n_sentences; ++s) {
      const Template& tpl = pick_template();
      std::array<MentionClass, kNumTasks> gold{};
      gold.fill(C::no_mention);

      std::string text = tpl.text;
      std::vector<TaskId> bound;
      for (std::size_t slot = 0; slot < tpl.effects.size(); ++slot) {
        TaskId task;
        do {
          task = finding_tasks[static_cast<std::size_t>(rng.below(finding_tasks.size()))];
        } while (std::find(bound.begin(), bound.end(), task) != bound.end());
        bound.push_back(task);
        const auto& forms = config.surface_forms[index_of(task)];
        std::string surface = forms.front();
        if (forms.size() > 1 && rng.bernoulli(config.noise.synonym_swap_rate)) {
          surface = forms[1 + static_cast<std::size_t>(rng.below(forms.size() - 1))];
        }
        replace_all(text, slot == 0 ? kSlot1 : kSlot2, surface);
        gold[index_of(task)] = tpl.effects[slot];
      }
      if (text.find("{size}") != std::string::npos) replace_all(text, "{size}", weighted_pick_text(kSizes, rng));
      if (text.find("{side}") != std::string::npos) replace_all(text, "{side}", weighted_pick_text(kSides, rng));

      const double cue_rate =
          config.noise.typos_in_cues ? config.noise.cue_typo_rate.value_or(config.noise.typo_rate) : 0.0;
      if (config.noise.typo_rate > 0 || cue_rate > 0) {
        std::string noisy;
        std::size_t pos = 0;
        while (pos <= text.size()) {
          std::size_t next = text.find(' ', pos);
          if (next == std::string::npos) next = text.size();
          std::string word = text.substr(pos, next - pos);
          std::string bare;
          for (char ch : word) {
            if (is_alpha(ch)) bare.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
          }
          const bool cue = cue_words.count(bare) > 0;
          const bool protected_word = cue && !config.noise.typos_in_cues;
          const double rate = cue ? cue_rate : config.noise.typo_rate;
          if (!protected_word && !bare.empty() && rng.bernoulli(rate)) word = typo(word, rng);
          if (!noisy.empty()) noisy.push_back(' ');
          noisy += word;
          pos = next + 1;
        }
        text = std::move(noisy);
      }
      if (!text.empty()) text[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));

      out.sentences.push_back(SentenceRecord::make(report_id, static_cast<std::int64_t>(s), text));
      out.gold.push_back({report_id, static_cast<std::int64_t>(s), LabelVector::with_derived_no_finding(gold)});
    }
  }
  return out;
}

void to_json(json& j, const SplitManifest& m) {
  j = json{{"train_report_ids", m.train_report_ids},
           {"val_report_ids", m.val_report_ids},
           {"test_report_ids", m.test_report_ids},
           {"unseen_test_keys", m.unseen_test_keys}};
}

void from_json(const json& j, SplitManifest& m) {
  m.train_report_ids = j.at("train_report_ids").get<std::vector<std::string>>();
  m.val_report_ids = j.at("val_report_ids").get<std::vector<std::string>>();
  m.test_report_ids = j.at("test_report_ids").get<std::vector<std::string>>();
  m.unseen_test_keys = j.at("unseen_test_keys").get<std::vector<std::string>>();
}

SplitManifest split(std::span<const SentenceRecord> corpus, SplitFractions f, std::uint64_t seed) {
  for (double x : {f.train, f.val, f.test}) {
    if (!(x >= 0.0 && x <= 1.0)) throw ValidationError("split fractions must lie in [0, 1]");
  }
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9) throw ValidationError("split fractions must sum to 1");

  std::set<std::string> unique_ids;
  for (const auto& s : corpus) unique_ids.insert(s.report_id);
  std::vector<std::string> ids(unique_ids.begin(), unique_ids.end());
  const std::size_t n = ids.size();
  const std::size_t parts = (f.train > 0) + (f.val > 0) + (f.test > 0);
  if (n < parts) {
    throw PreconditionError("cannot split " + std::to_string(n) + " reports into " + std::to_string(parts) +
                            " parts");
  }
  auto share = [n](double frac) -> std::size_t {
    if (frac <= 0) return 0;
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(frac * static_cast<double>(n))));
  };
  const std::size_t n_val = share(f.val);
  const std::size_t n_test = share(f.test);
  if (n_val + n_test > n || (f.train > 0 && n_val + n_test == n)) {
    throw PreconditionError("too few reports (" + std::to_string(n) + ") for the requested fractions");
  }
  Rng rng(seed);
  rng.shuffle(ids);

  SplitManifest m;
  m.val_report_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_val));
  m.test_report_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_val),
                           ids.begin() + static_cast<std::ptrdiff_t>(n_val + n_test));
  m.train_report_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_val + n_test), ids.end());
  std::sort(m.train_report_ids.begin(), m.train_report_ids.end());
  std::sort(m.val_report_ids.begin(), m.val_report_ids.end());
  std::sort(m.test_report_ids.begin(), m.test_report_ids.end());

  const std::unordered_set<std::string> train(m.train_report_ids.begin(), m.train_report_ids.end());
  const std::unordered_set<std::string> test(m.test_report_ids.begin(), m.test_report_ids.end());
  std::unordered_set<std::string> train_keys;
  for (const auto& s : corpus) {
    if (train.count(s.report_id)) train_keys.insert(s.dedup_key);
  }
  std::set<std::string> unseen;
  for (const auto& s : corpus) {
    if (test.count(s.report_id) && !train_keys.count(s.dedup_key)) unseen.insert(s.dedup_key);
  }
  m.unseen_test_keys.assign(unseen.begin(), unseen.end());
  return m;
}

IngestFormat parse_ingest_format(std::string_view name) {
  if (name == "jsonl") return IngestFormat::jsonl;
  if (name == "csv") return IngestFormat::csv;
  throw ParseError("unknown ingest format '" + std::string(name) + "' (expected jsonl or csv)");
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  auto push = [&](std::string_view piece) {
    const auto b = piece.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return;
    const auto e = piece.find_last_not_of(" \t\r\n");
    out.emplace_back(piece.substr(b, e - b + 1));
  };
  std::size_t start = 0;
  for (std::size_t i = 0; i + 1 < text.size(); ++i) {
    const char c = text[i];
    if ((c == '.' || c == '?' || c == '!') && std::isspace(static_cast<unsigned char>(text[i + 1]))) {
      push(text.substr(start, i + 1 - start));
      start = i + 1;
    }
  }
  push(text.substr(start));
  return out;
}

namespace {

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len;
    std::uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > s.size()) return false;
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    const bool overlong = (len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000);
    if (overlong || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += len;
  }
  return true;
}

std::string at_line(const fs::path& path, std::size_t line) { return path.string() + ":" + std::to_string(line) + ": "; }

// One raw input row, before sentence splitting.
struct RawRow {
  std::size_t line;
  std::string report_id;
  std::optional<std::int64_t> sentence_index;
  std::string text;
};

// RFC 4180 style: quoted fields may contain commas, doubled quotes and newlines.
std::vector<std::pair<std::size_t, std::vector<std::string>>> parse_csv(const std::string& data, const fs::path& path) {
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
  std::vector<std::string> fields;
  std::string field;
  bool in_quotes = false;
  bool field_quoted = false;
  std::size_t line = 1;
  std::size_t row_start = 1;
  auto end_row = [&] {
    fields.push_back(std::move(field));
    field.clear();
    const bool blank = fields.size() == 1 && fields[0].empty() && !field_quoted;
    if (!blank) rows.emplace_back(row_start, std::move(fields));
    fields.clear();
    field_quoted = false;
  };
  for (std::size_t i = 0; i < data.size(); ++i) {
    const char c = data[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < data.size() && data[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field.empty()) throw ParseError(at_line(path, line) + "stray quote inside unquoted field");
        in_quotes = true;
        field_quoted = true;
        break;
      case ',':
        fields.push_back(std::move(field));
        field.clear();
        break;
      case '\r':
        break;
      case '\n':
        end_row();
        ++line;
        row_start = line;
        break;
      default:
        field.push_back(c);
    }
  }
  if (in_quotes) throw ParseError(at_line(path, row_start) + "unterminated quoted field");
  if (!field.empty() || !fields.empty()) end_row();
  return rows;
}

std::vector<RawRow> read_raw_csv(const fs::path& path) {
  const std::string data = read_text(path);
  auto rows = parse_csv(data, path);
  if (rows.empty()) throw ParseError(path.string() + ": missing header row");
  const auto& header = rows.front().second;
  auto column = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    return std::nullopt;
  };
  const auto report_col = column("report_id");
  const auto index_col = column("sentence_index");
  const auto text_col = column("text");
  if (!report_col || !text_col) {
    throw ValidationError(at_line(path, 1) + "header must contain columns report_id and text (sentence_index optional)");
  }
  std::vector<RawRow> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    auto& [line, fields] = rows[r];
    if (fields.size() != header.size()) {
      throw ParseError(at_line(path, line) + "expected " + std::to_string(header.size()) + " fields, got " +
                       std::to_string(fields.size()));
    }
    RawRow row{line, fields[*report_col], std::nullopt, fields[*text_col]};
    if (index_col && !fields[*index_col].empty()) {
      try {
        std::size_t used = 0;
        row.sentence_index = std::stoll(fields[*index_col], &used);
        if (used != fields[*index_col].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ParseError(at_line(path, line) + "sentence_index '" + fields[*index_col] + "' is not an integer");
      }
    }
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<RawRow> read_raw_jsonl(const fs::path& path) {
  std::vector<RawRow> out;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!valid_utf8(line)) throw ParseError(at_line(path, n) + "undecodable bytes (invalid UTF-8)");
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      RawRow row{n, j.at("report_id").get<std::string>(), std::nullopt, j.at("text").get<std::string>()};
      if (j.contains("sentence_index") && !j.at("sentence_index").is_null()) {
        row.sentence_index = j.at("sentence_index").get<std::int64_t>();
      }
      out.push_back(std::move(row));
    } catch (const json::exception& e) {
      throw ParseError(at_line(path, n) + e.what());
    }
  }
  return out;
}

}  // namespace

std::vector<SentenceRecord> ingest(const fs::path& path, IngestFormat format) {
  std::vector<RawRow> rows;
  if (format == IngestFormat::csv) {
    // Validate encoding line by line first so the error names the right line.
    const std::string data = read_text(path);
    std::size_t line = 1, start = 0;
    for (std::size_t i = 0; i <= data.size(); ++i) {
      if (i == data.size() || data[i] == '\n') {
        if (!valid_utf8(std::string_view(data).substr(start, i - start))) {
          throw ParseError(at_line(path, line) + "undecodable bytes (invalid UTF-8)");
        }
        ++line;
        start = i + 1;
      }
    }
    rows = read_raw_csv(path);
  } else {
    rows = read_raw_jsonl(path);
  }

  std::vector<SentenceRecord> out;
  std::map<std::string, std::int64_t> next_index;
  std::set<SentenceId> seen;
  for (const auto& row : rows) {
    std::vector<std::pair<std::int64_t, std::string>> pieces;
    if (row.sentence_index) {
      pieces.emplace_back(*row.sentence_index, row.text);
    } else {
      for (auto& s : split_sentences(row.text)) pieces.emplace_back(next_index[row.report_id]++, std::move(s));
    }
    for (auto& [idx, text] : pieces) {
      if (idx < 0) throw ValidationError(at_line(path, row.line) + "sentence_index must be non-negative");
      if (!seen.insert({row.report_id, idx}).second) {
        throw ValidationError(at_line(path, row.line) + "duplicate (report_id, sentence_index) " + row.report_id +
                              "#" + std::to_string(idx));
      }
      next_index[row.report_id] = std::max(next_index[row.report_id], idx + 1);
      out.push_back(SentenceRecord::make(row.report_id, idx, std::move(text)));
    }
  }
  return out;
}

}  // namespace silverloop
