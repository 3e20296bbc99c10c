#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include "silverloop/core.hpp"
#include "silverloop/io.hpp"

namespace testing {

namespace fs = std::filesystem;

inline fs::path source_path(const std::string& rel) { return fs::path(SILVERLOOP_SOURCE_DIR) / rel; }

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("silverloop-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline silverloop::MentionClass random_class(silverloop::Rng& rng, silverloop::TaskId t) {
  using silverloop::MentionClass;
  if (t == silverloop::TaskId::no_finding) return rng.below(2) ? MentionClass::positive : MentionClass::negative;
  return silverloop::kAllClasses[rng.below(4)];
}

inline silverloop::LabelVector random_labels(silverloop::Rng& rng) {
  std::array<silverloop::MentionClass, silverloop::kNumTasks> v{};
  for (auto t : silverloop::kAllTasks) v[silverloop::index_of(t)] = random_class(rng, t);
  return silverloop::LabelVector(v);
}

inline std::vector<silverloop::LabelRecord> random_label_file(silverloop::Rng& rng, std::size_t n) {
  std::vector<silverloop::LabelRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({"r" + std::to_string(i / 3), static_cast<std::int64_t>(i % 3), random_labels(rng)});
  }
  return out;
}

// Copy of `base` with each label resampled with probability p.
inline std::vector<silverloop::LabelRecord> perturb(silverloop::Rng& rng, std::vector<silverloop::LabelRecord> base,
                                                   double p) {
  for (auto& r : base) {
    auto v = r.labels.values();
    for (auto t : silverloop::kAllTasks) {
      if (rng.bernoulli(p)) v[silverloop::index_of(t)] = random_class(rng, t);
    }
    r.labels = silverloop::LabelVector(v);
  }
  return base;
}

}  // namespace testing
