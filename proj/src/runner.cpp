#include "dsai/runner.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "dsai/clustering.hpp"
#include "dsai/digest.hpp"
#include "dsai/error.hpp"
#include "dsai/matching.hpp"
#include "dsai/perspectives.hpp"
#include "dsai/textutil.hpp"
#include "json.hpp"

namespace dsai {

using nlohmann::json;

std::string stage_status_name(StageStatus status) {
  switch (status) {
    case StageStatus::pending: return "pending";
    case StageStatus::done: return "done";
    case StageStatus::failed: return "failed";
  }
  return "pending";
}

StageStatus stage_status_from_name(const std::string& name) {
  if (name == "done") return StageStatus::done;
  if (name == "failed") return StageStatus::failed;
  return StageStatus::pending;
}

RunConfig RunConfig::from_json(const std::string& text) {
  json parsed = json::parse(text);
  RunConfig config;
  auto get = [&](const char* key, auto& field) {
    if (parsed.contains(key)) {
      field = parsed[key].get<std::decay_t<decltype(field)>>();
    }
  };
  get("seed", config.seed);
  get("subset_pos", config.subset_pos);
  get("subset_neg", config.subset_neg);
  get("per_step", config.per_step);
  get("steps", config.steps);
  get("batch", config.batch);
  get("min_prominence", config.min_prominence);
  get("min_frequency", config.min_frequency);
  get("require_positive_prominence", config.require_positive_prominence);
  get("stage1_temperature", config.stage1_temperature);
  get("backend", config.backend);
  get("dataset_name", config.dataset_name);
  get("blocklist", config.blocklist);
  return config;
}

std::string RunConfig::to_json() const {
  return json{{"seed", seed},
              {"subset_pos", subset_pos},
              {"subset_neg", subset_neg},
              {"per_step", per_step},
              {"steps", steps},
              {"batch", batch},
              {"min_prominence", min_prominence},
              {"min_frequency", min_frequency},
              {"require_positive_prominence", require_positive_prominence},
              {"stage1_temperature", stage1_temperature},
              {"backend", backend},
              {"dataset_name", dataset_name},
              {"blocklist", blocklist}}
      .dump(2);
}

std::string RunManifest::to_json() const {
  json stages_json;
  for (const auto& [number, state] : stages) {
    stages_json[std::to_string(number)] = {
        {"status", stage_status_name(state.status)},
        {"outputs", state.outputs},
        {"digests", state.digests}};
  }
  return json{{"run_id", run_id},
              {"dataset_digest", dataset_digest},
              {"backend_id", backend_id},
              {"config", json::parse(config.to_json())},
              {"stages", stages_json}}
      .dump(2);
}

RunManifest RunManifest::from_json(const std::string& text) {
  json parsed = json::parse(text);
  RunManifest manifest;
  manifest.run_id = parsed.at("run_id").get<std::string>();
  manifest.dataset_digest = parsed.at("dataset_digest").get<std::string>();
  manifest.backend_id = parsed.at("backend_id").get<std::string>();
  manifest.config = RunConfig::from_json(parsed.at("config").dump());
  if (parsed.contains("stages")) {
    for (const auto& [key, value] : parsed["stages"].items()) {
      StageState state;
      state.status =
          stage_status_from_name(value.at("status").get<std::string>());
      state.outputs = value.at("outputs").get<std::vector<std::string>>();
      state.digests =
          value.at("digests").get<std::map<std::string, std::string>>();
      manifest.stages[std::stoi(key)] = std::move(state);
    }
  }
  return manifest;
}

RunDir::RunDir(std::filesystem::path root, bool create) : root_(std::move(root)) {
  if (create) {
    std::filesystem::create_directories(root_);
    std::filesystem::create_directories(root_ / "cache");
  }
  if (!std::filesystem::is_directory(root_)) {
    throw Error(ErrorCode::precondition,
                "run directory does not exist: " + root_.string());
  }
  // One writer per run directory.
  std::filesystem::path lock_path = root_ / ".lock";
  lock_fd_ = ::open(lock_path.c_str(), O_CREAT | O_RDWR, 0644);
  if (lock_fd_ < 0 || ::flock(lock_fd_, LOCK_EX | LOCK_NB) != 0) {
    if (lock_fd_ >= 0) ::close(lock_fd_);
    throw Error(ErrorCode::run_locked,
                "run directory is locked by another process: " +
                    root_.string());
  }
}

RunDir::~RunDir() {
  if (lock_fd_ >= 0) {
    ::flock(lock_fd_, LOCK_UN);
    ::close(lock_fd_);
  }
}

bool RunDir::has_manifest() const {
  return std::filesystem::exists(file("manifest.json"));
}

RunManifest RunDir::load_manifest() const {
  std::ifstream in(file("manifest.json"));
  if (!in) {
    throw Error(ErrorCode::manifest,
                "no manifest in run directory: " + root_.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return RunManifest::from_json(buf.str());
}

void RunDir::save_manifest(const RunManifest& manifest) const {
  std::filesystem::path target = file("manifest.json");
  std::filesystem::path tmp = file("manifest.json.tmp");
  {
    std::ofstream out(tmp);
    out << manifest.to_json() << "\n";
  }
  std::filesystem::rename(tmp, target);
}

void RunDir::save_ledger(const UsageLedger& ledger) const {
  std::filesystem::path tmp = file("ledger.json.tmp");
  {
    std::ofstream out(tmp);
    out << ledger.to_json() << "\n";
  }
  std::filesystem::rename(tmp, file("ledger.json"));
}

StageRange StageRange::parse(const std::string& text) {
  StageRange range;
  auto dash = text.find('-');
  try {
    if (dash == std::string::npos) {
      range.first = range.last = std::stoi(text);
    } else {
      range.first = std::stoi(text.substr(0, dash));
      range.last = std::stoi(text.substr(dash + 1));
    }
  } catch (...) {
    throw Error(ErrorCode::precondition, "bad stage range: " + text);
  }
  if (range.first < 1 || range.last > 5 || range.first > range.last) {
    throw Error(ErrorCode::precondition, "stage range must be within 1-5");
  }
  return range;
}

namespace {

const std::map<int, std::vector<std::string>> kStageOutputs = {
    {1, {"stage1_perspectives.jsonl"}},
    {2, {"stage2_values.jsonl"}},
    {3, {"stage3_schemes.jsonl", "stage3_cells.jsonl"}},
    {4, {"stage4_criteria.jsonl"}},
    {5, {"stage5_selected.jsonl"}},
};

bool stage_intact(const RunDir& run, const StageState& state) {
  if (state.status != StageStatus::done) return false;
  for (const auto& [name, digest] : state.digests) {
    std::filesystem::path path = run.file(name);
    if (!std::filesystem::exists(path) || sha256_file(path) != digest) {
      return false;
    }
  }
  return true;
}

void execute_stage(int stage, RunDir& run, const RunConfig& config,
                   Gateway& gateway, const PromptRegistry& prompts,
                   const Dataset& dataset) {
  switch (stage) {
    case 1: {
      auto subset = sample_subset(dataset, config.subset_pos, config.subset_neg,
                                  config.seed);
      GenerationConfig gen;
      gen.per_step = config.per_step;
      gen.steps = config.steps;
      gen.temperature = config.stage1_temperature;
      gen.dataset_name = config.dataset_name;
      gen.blocklist = config.blocklist;
      PerspectiveSet generated =
          generate_perspectives(subset, gen, gateway, prompts);
      PerspectiveSet deduped = dedup_perspectives(generated, gateway, prompts);
      save_perspectives(deduped, run.file("stage1_perspectives.jsonl"));
      break;
    }
    case 2: {
      PerspectiveSet perspectives =
          load_perspectives(run.file("stage1_perspectives.jsonl"));
      AssignmentTable table =
          match_values(dataset, perspectives, gateway, prompts, config.batch);
      save_assignments(table, run.file("stage2_values.jsonl"));
      break;
    }
    case 3: {
      PerspectiveSet perspectives =
          load_perspectives(run.file("stage1_perspectives.jsonl"));
      AssignmentTable table = load_assignments(run.file("stage2_values.jsonl"));
      std::vector<ClusterScheme> schemes;
      for (const auto& p : perspectives.perspectives) {
        auto values = distinct_values(table, p.id);
        if (values.empty()) continue;  // all NA: no cells for this perspective
        auto labels = generate_cluster_labels(p, values, gateway, prompts);
        schemes.push_back(
            assign_values_to_clusters(p, values, labels, gateway, prompts));
      }
      save_schemes(schemes, run.file("stage3_schemes.jsonl"));
      save_cells(build_cells(table, schemes, dataset),
                 run.file("stage3_cells.jsonl"));
      break;
    }
    case 4: {
      PerspectiveSet perspectives =
          load_perspectives(run.file("stage1_perspectives.jsonl"));
      std::map<std::string, const Perspective*> by_id;
      for (const auto& p : perspectives.perspectives) by_id[p.id] = &p;
      std::vector<Criterion> criteria;
      for (const auto& cell : load_cells(run.file("stage3_cells.jsonl"))) {
        if (directional_score(cell) == 0.0) continue;  // never verbalized
        criteria.push_back(
            verbalize(cell, *by_id.at(cell.perspective_id), gateway, prompts));
      }
      save_criteria(criteria, run.file("stage4_criteria.jsonl"));
      break;
    }
    case 5: {
      std::vector<Criterion> criteria =
          load_criteria(run.file("stage4_criteria.jsonl"));
      SelectionConfig selection;
      selection.min_prominence = config.min_prominence;
      selection.min_frequency = config.min_frequency;
      selection.require_positive_prominence =
          config.require_positive_prominence;
      save_criteria(select(criteria, selection),
                    run.file("stage5_selected.jsonl"));
      break;
    }
    default:
      throw Error(ErrorCode::precondition,
                  "unknown stage: " + std::to_string(stage));
  }
}

}  // namespace

RunManifest run_pipeline(RunDir& run, StageRange stages, bool force,
                         Gateway& gateway, const PromptRegistry& prompts) {
  RunManifest manifest = run.load_manifest();
  Dataset dataset = load_dataset(run.file("dataset.jsonl"));
  std::string digest = sha256_file(run.file("dataset.jsonl"));
  if (manifest.dataset_digest != digest) {
    throw Error(ErrorCode::manifest,
                "dataset.jsonl changed since the run was created");
  }

  // Predecessors must be done or included in the requested range.
  for (int stage = 1; stage < stages.first; ++stage) {
    if (!stage_intact(run, manifest.stages[stage])) {
      throw Error(ErrorCode::precondition,
                  "stage " + std::to_string(stage) +
                      " is not done; include it in --stages or rerun");
    }
  }

  for (int stage = stages.first; stage <= stages.last; ++stage) {
    StageState& state = manifest.stages[stage];
    if (!force && stage_intact(run, state)) continue;
    try {
      execute_stage(stage, run, manifest.config, gateway, prompts, dataset);
    } catch (...) {
      state.status = StageStatus::failed;
      run.save_manifest(manifest);
      run.save_ledger(gateway.ledger());
      throw;
    }
    state.status = StageStatus::done;
    state.outputs = kStageOutputs.at(stage);
    state.digests.clear();
    for (const auto& name : state.outputs) {
      state.digests[name] = sha256_file(run.file(name));
    }
    run.save_manifest(manifest);
    run.save_ledger(gateway.ledger());
  }
  return manifest;
}

PlantedSpec PlantedSpec::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::precondition,
                "cannot read planted spec: " + path.string());
  }
  json parsed = json::parse(in);
  PlantedSpec spec;
  spec.n_pos = parsed.value("n_pos", 100);
  spec.n_neg = parsed.value("n_neg", 100);
  spec.seed = parsed.value("seed", std::uint64_t{1});
  for (const auto& m : parsed.at("markers")) {
    spec.markers.push_back({m.at("token").get<std::string>(),
                            m.at("rate_in_positives").get<double>(),
                            m.at("rate_in_negatives").get<double>()});
  }
  return spec;
}

namespace {

// Platform-independent uniform in [0,1) from raw mt19937_64 output.
double next_unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

const char* kFiller[] = {"amber", "brisk", "cedar", "dune",  "ember", "fable",
                         "gleam", "haze",  "inlet", "jolt",  "knoll", "lark",
                         "mirth", "nectar", "orbit", "pluck", "quill", "ridge",
                         "sprig", "tundra", "umber", "verge", "willow", "zephyr"};

}  // namespace

Dataset generate_planted(const PlantedSpec& spec) {
  for (const auto& m : spec.markers) {
    if (m.rate_in_positives < 0 || m.rate_in_positives > 1 ||
        m.rate_in_negatives < 0 || m.rate_in_negatives > 1) {
      throw Error(ErrorCode::precondition,
                  "marker rates must be in [0,1]: " + m.token);
    }
  }
  {
    std::set<std::string> tokens;
    for (const auto& m : spec.markers) {
      if (!tokens.insert(m.token).second) {
        throw Error(ErrorCode::precondition,
                    "duplicate marker token: " + m.token);
      }
    }
  }

  std::mt19937_64 rng(spec.seed);
  constexpr std::size_t kFillerCount = std::size(kFiller);

  Dataset dataset;
  dataset.name = "planted";
  auto make_sample = [&](const std::string& prefix, int index, Label label) {
    std::vector<std::string> words;
    for (int w = 0; w < 8; ++w) {
      words.push_back(kFiller[rng() % kFillerCount]);
    }
    for (const auto& m : spec.markers) {
      double rate = label == Label::positive ? m.rate_in_positives
                                             : m.rate_in_negatives;
      if (next_unit(rng) < rate) {
        std::size_t at = rng() % (words.size() + 1);
        words.insert(words.begin() + static_cast<std::ptrdiff_t>(at), m.token);
      }
    }
    Sample sample;
    char id[32];
    std::snprintf(id, sizeof(id), "%s_%04d", prefix.c_str(), index);
    sample.id = id;
    sample.label = label;
    std::ostringstream text;
    for (std::size_t w = 0; w < words.size(); ++w) {
      if (w > 0) text << ' ';
      text << words[w];
    }
    sample.text = text.str();
    return sample;
  };

  for (int i = 0; i < spec.n_pos; ++i) {
    dataset.samples.push_back(make_sample("pos", i, Label::positive));
  }
  for (int i = 0; i < spec.n_neg; ++i) {
    dataset.samples.push_back(make_sample("neg", i, Label::negative));
  }
  return dataset;
}

}  // namespace dsai
