#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "silverloop/core.hpp"

namespace silverloop {

namespace fs = std::filesystem;

// Writes to a sibling temp file; commit() renames it over the target. An
// uncommitted writer removes its temp file on destruction.
class AtomicFile {
 public:
  explicit AtomicFile(fs::path target);
  ~AtomicFile();
  AtomicFile(const AtomicFile&) = delete;
  AtomicFile& operator=(const AtomicFile&) = delete;

  std::ostream& stream() { return out_; }
  void commit();

 private:
  fs::path target_;
  fs::path temp_;
  std::ofstream out_;
  bool committed_ = false;
};

void write_text_atomic(const fs::path& path, const std::string& content);
std::string read_text(const fs::path& path);

// Calls fn(value, line_number) for each non-blank line. Parse failures and
// exceptions thrown by fn are rethrown as errors naming the 1-based line.
void for_each_jsonl(const fs::path& path, const std::function<void(const json&, std::size_t)>& fn);

template <typename T>
std::vector<T> read_jsonl(const fs::path& path) {
  std::vector<T> out;
  for_each_jsonl(path, [&](const json& j, std::size_t) { out.push_back(j.get<T>()); });
  return out;
}

template <typename T>
void write_jsonl(const fs::path& path, std::span<const T> rows) {
  AtomicFile f(path);
  for (const auto& r : rows) f.stream() << json(r).dump() << '\n';
  f.commit();
}

std::vector<SentenceRecord> read_corpus(const fs::path& path);
void write_corpus(const fs::path& path, std::span<const SentenceRecord> rows);
std::vector<LabelRecord> read_labels(const fs::path& path);
void write_labels(const fs::path& path, std::span<const LabelRecord> rows);

json read_json(const fs::path& path);
void write_json(const fs::path& path, const json& value);

// Seeded generator with portable distributions: std::mt19937_64 is fully
// specified, the std distributions are not, so sampling is done here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, n); n > 0.
  std::uint64_t below(std::uint64_t n);
  // Uniform in [0, 1).
  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }
  bool bernoulli(double p) { return unit() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace silverloop
