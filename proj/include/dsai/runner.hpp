#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dsai/corpus.hpp"
#include "dsai/criteria.hpp"
#include "dsai/gateway.hpp"
#include "dsai/prompts.hpp"

namespace dsai {

enum class StageStatus { pending, done, failed };

std::string stage_status_name(StageStatus status);
StageStatus stage_status_from_name(const std::string& name);

struct StageState {
  StageStatus status = StageStatus::pending;
  std::vector<std::string> outputs;  // file names within the run dir
  std::map<std::string, std::string> digests;  // file -> sha256
};

// Resolved configuration, snapshotted into the manifest so reruns cannot
// drift. Flags > config file > defaults.
struct RunConfig {
  std::uint64_t seed = 42;
  int subset_pos = 5;
  int subset_neg = 5;
  int per_step = 50;
  int steps = 3;
  int batch = 3;
  double min_prominence = 0.0;
  int min_frequency = 7;
  bool require_positive_prominence = true;
  double stage1_temperature = 1.0;
  std::string backend = "";  // selector, e.g. "mock:script.json"
  std::string dataset_name;
  std::vector<std::string> blocklist;

  static RunConfig from_json(const std::string& text);
  std::string to_json() const;
};

struct RunManifest {
  std::string run_id;
  std::string dataset_digest;
  std::string backend_id;
  RunConfig config;
  std::map<int, StageState> stages;  // 1..5

  std::string to_json() const;
  static RunManifest from_json(const std::string& text);
};

// One pipeline run on disk: manifest.json, dataset.jsonl, stage outputs,
// cache/, ledger.json. Holds the single-writer lock for its lifetime.
class RunDir {
 public:
  explicit RunDir(std::filesystem::path root, bool create = true);
  ~RunDir();

  RunDir(const RunDir&) = delete;
  RunDir& operator=(const RunDir&) = delete;

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path file(const std::string& name) const {
    return root_ / name;
  }

  bool has_manifest() const;
  RunManifest load_manifest() const;
  void save_manifest(const RunManifest& manifest) const;  // atomic

  void save_ledger(const UsageLedger& ledger) const;

 private:
  std::filesystem::path root_;
  int lock_fd_ = -1;
};

struct StageRange {
  int first = 1;
  int last = 5;

  static StageRange parse(const std::string& text);  // "1-5", "4"
};

// Executes the requested stages in order, persisting outputs and updating
// the manifest after each stage. Done stages are skipped unless force.
RunManifest run_pipeline(RunDir& run, StageRange stages, bool force,
                         Gateway& gateway, const PromptRegistry& prompts);

struct MarkerSpec {
  std::string token;
  double rate_in_positives = 0.0;
  double rate_in_negatives = 0.0;
};

struct PlantedSpec {
  std::vector<MarkerSpec> markers;
  int n_pos = 100;
  int n_neg = 100;
  std::uint64_t seed = 1;

  static PlantedSpec from_json_file(const std::filesystem::path& path);
};

// Deterministic synthetic corpus with analytically known cell statistics.
Dataset generate_planted(const PlantedSpec& spec);

}  // namespace dsai
