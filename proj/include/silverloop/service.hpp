#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "silverloop/active.hpp"
#include "silverloop/io.hpp"

namespace silverloop {

// Files the service reads from and writes to inside its data directory.
namespace data_files {
inline constexpr const char* kCorpus = "corpus.jsonl";
inline constexpr const char* kLabels = "labels.jsonl";
inline constexpr const char* kHeldout = "heldout.jsonl";
inline constexpr const char* kSelection = "selection.jsonl";
inline constexpr const char* kAdjudicationQueue = "adjudication_queue.jsonl";
inline constexpr const char* kUnblinding = "adjudication_unblinding.json";
inline constexpr const char* kAnnotations = "annotations.jsonl";
inline constexpr const char* kAdjudications = "adjudications.jsonl";
inline constexpr const char* kRounds = "rounds";
}  // namespace data_files

struct ServiceConfig {
  fs::path data_dir = ".";
  std::optional<fs::path> checkpoint;
  // Teacher labels are computed from these rules when set, otherwise read
  // from labels.jsonl if present.
  std::optional<fs::path> rules;
  std::optional<fs::path> ui_dir;
  RoundConfig round;
  // Runs on the round worker before training starts.
  std::function<void()> before_round;
};

// HTTP API under /api/v1. All state lives in the data directory; restarting
// from the same directory rebuilds the queues from the annotation logs.
class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds to host:port (port 0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void serve();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace silverloop
