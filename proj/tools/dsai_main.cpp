#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "dsai/clustering.hpp"
#include "dsai/corpus.hpp"
#include "dsai/criteria.hpp"
#include "dsai/digest.hpp"
#include "dsai/error.hpp"
#include "dsai/evaluation.hpp"
#include "dsai/gateway.hpp"
#include "dsai/matching.hpp"
#include "dsai/perspectives.hpp"
#include "dsai/prompts.hpp"
#include "dsai/runner.hpp"
#include "json.hpp"

namespace {

using namespace dsai;
using nlohmann::json;

RunConfig load_config(const std::string& config_path) {
  if (config_path.empty()) return RunConfig{};
  std::ifstream in(config_path);
  if (!in) {
    throw Error(ErrorCode::precondition,
                "cannot read config: " + config_path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return RunConfig::from_json(buf.str());
}

std::unique_ptr<Gateway> open_gateway(const RunDir& run,
                                      const RunConfig& config,
                                      const std::string& backend_flag) {
  std::string selector = !backend_flag.empty() ? backend_flag : config.backend;
  auto gateway =
      std::make_unique<Gateway>(make_backend(selector), run.file("cache"));
  // Usage accumulates across commands within a run.
  auto ledger_path = run.file("ledger.json");
  if (std::filesystem::exists(ledger_path)) {
    std::ifstream in(ledger_path);
    std::ostringstream buf;
    buf << in.rdbuf();
    gateway->ledger() = UsageLedger::from_json(buf.str());
  }
  return gateway;
}

void init_manifest(RunDir& run, const RunConfig& config,
                   const std::string& backend_flag) {
  RunManifest manifest;
  manifest.run_id = sha256_file(run.file("dataset.jsonl")).substr(0, 12);
  manifest.dataset_digest = sha256_file(run.file("dataset.jsonl"));
  manifest.config = config;
  if (!backend_flag.empty()) manifest.config.backend = backend_flag;
  for (int stage = 1; stage <= 5; ++stage) manifest.stages[stage] = {};
  run.save_manifest(manifest);
}

std::vector<Criterion> load_selected(const RunDir& run) {
  auto path = run.file("stage5_selected.jsonl");
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::precondition,
                "no stage5_selected.jsonl; run `dsai run --stages 1-5` first");
  }
  return load_criteria(path);
}

int run_cli(int argc, char** argv) {
  CLI::App app{"DSAI: data-grounded latent feature extraction pipeline"};
  app.require_subcommand(1);

  std::string run_dir = ".";
  app.add_option("--run-dir", run_dir, "Run directory")->capture_default_str();
  std::string backend_flag;
  app.add_option("--backend", backend_flag,
                 "Backend selector: mock:<script> or http:<base url>");

  PromptRegistry prompts;

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Validate a dataset into a run");
  std::string ingest_file;
  std::string ingest_config;
  ingest->add_option("file", ingest_file, "JSON-lines dataset")->required();
  ingest->add_option("--config", ingest_config, "Run config JSON");
  ingest->callback([&] {
    Dataset dataset = load_dataset(ingest_file);
    RunDir run(run_dir);
    save_dataset(dataset, run.file("dataset.jsonl"));
    RunConfig config = load_config(ingest_config);
    if (config.dataset_name.empty()) config.dataset_name = dataset.name;
    init_manifest(run, config, backend_flag);
    std::cout << "ingested " << dataset.samples.size() << " samples into "
              << run.root().string() << "\n";
  });

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a planted dataset");
  std::string synth_spec;
  std::string synth_config;
  synth->add_option("--spec", synth_spec, "Planted spec JSON")->required();
  synth->add_option("--config", synth_config, "Run config JSON");
  synth->callback([&] {
    PlantedSpec spec = PlantedSpec::from_json_file(synth_spec);
    Dataset dataset = generate_planted(spec);
    RunDir run(run_dir);
    save_dataset(dataset, run.file("dataset.jsonl"));
    init_manifest(run, load_config(synth_config), backend_flag);
    std::cout << "planted " << dataset.samples.size() << " samples into "
              << run.root().string() << "\n";
  });

  // annotate
  auto* annotate = app.add_subcommand(
      "annotate", "Annotate the dataset against expert criteria");
  std::string criteria_file;
  annotate->add_option("--criteria", criteria_file, "Reference criteria JSONL")
      ->required();
  annotate->callback([&] {
    RunDir run(run_dir);
    RunManifest manifest = run.load_manifest();
    Dataset dataset = load_dataset(run.file("dataset.jsonl"));
    auto reference = ReferenceCriteria::from_jsonl_file(criteria_file);
    auto gateway = open_gateway(run, manifest.config, backend_flag);
    AnnotationMatrix matrix =
        annotate_with_criteria(dataset, reference.items, *gateway);
    save_annotation(matrix, run.file("annotation.jsonl"));
    run.save_ledger(gateway->ledger());
    std::cout << "annotated " << dataset.samples.size() << " samples against "
              << reference.items.size() << " criteria\n";
  });

  // split
  auto* split = app.add_subcommand(
      "split", "Top/bottom-k split of the annotated dataset");
  int split_k = 600;
  std::string split_out = "split.jsonl";
  split->add_option("--k", split_k, "Per-class size")->capture_default_str();
  split->add_option("--out", split_out, "Output file within the run dir")
      ->capture_default_str();
  split->callback([&] {
    RunDir run(run_dir);
    Dataset dataset = load_dataset(run.file("dataset.jsonl"));
    auto annotation_path = run.file("annotation.jsonl");
    if (!std::filesystem::exists(annotation_path)) {
      throw Error(ErrorCode::precondition,
                  "no annotation.jsonl; run `dsai annotate` first");
    }
    AnnotationMatrix matrix;
    std::ifstream in(annotation_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json record = json::parse(line);
      std::vector<bool> row;
      for (const auto& cell : record.at("cells")) {
        row.push_back(cell.get<std::string>() == "present");
      }
      matrix.cells[record.at("id").get<std::string>()] = std::move(row);
    }
    Dataset result = split_top_bottom(matrix, dataset, split_k);
    save_dataset(result, run.file(split_out));
    std::cout << "wrote " << result.samples.size() << " samples to "
              << split_out << " (ingest it into a fresh run)\n";
  });

  // run
  auto* run_cmd = app.add_subcommand("run", "Execute pipeline stages");
  std::string stages_text = "1-5";
  bool force = false;
  run_cmd->add_option("--stages", stages_text, "Stage range, e.g. 1-5 or 4")
      ->capture_default_str();
  run_cmd->add_flag("--force", force, "Rerun stages already done");
  run_cmd->callback([&] {
    RunDir run(run_dir);
    RunManifest manifest = run.load_manifest();
    auto gateway = open_gateway(run, manifest.config, backend_flag);
    RunManifest result = run_pipeline(run, StageRange::parse(stages_text),
                                      force, *gateway, prompts);
    for (const auto& [stage, state] : result.stages) {
      std::cout << "stage " << stage << ": "
                << stage_status_name(state.status) << "\n";
    }
  });

  // report
  auto* report_cmd = app.add_subcommand("report", "Top/bottom criteria report");
  int top_k = 20;
  report_cmd->add_option("--top", top_k, "Rows per end")->capture_default_str();
  report_cmd->callback([&] {
    RunDir run(run_dir);
    std::vector<Criterion> criteria =
        load_criteria(run.file("stage4_criteria.jsonl"));
    Report rep = report(criteria, top_k);
    {
      std::ofstream out(run.file("report.txt"));
      out << rep.to_text();
    }
    {
      std::ofstream out(run.file("report.json"));
      out << rep.to_json() << "\n";
    }
    std::cout << rep.to_text();
  });

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluation harnesses");
  eval->require_subcommand(1);

  auto* eval_dp = eval->add_subcommand("dp", "DP scores per criterion");
  std::string dp_annotations;
  eval_dp->add_option("--annotations", dp_annotations,
                      "Presence annotations JSONL (default: self-DP)");
  eval_dp->callback([&] {
    RunDir run(run_dir);
    std::vector<Criterion> criteria =
        load_criteria(run.file("stage4_criteria.jsonl"));
    std::ofstream out(run.file("eval_dp.jsonl"));
    if (dp_annotations.empty()) {
      // Self-evaluation: presence == cell membership.
      std::map<std::pair<std::string, std::string>, FeatureCell> cells;
      for (auto& cell : load_cells(run.file("stage3_cells.jsonl"))) {
        cells[{cell.perspective_id, cell.label}] = cell;
      }
      for (const auto& c : criteria) {
        const FeatureCell& cell = cells.at({c.perspective_id, c.label});
        out << json{{"criterion", c.text},
                    {"dp", self_dp(cell)},
                    {"n_used", cell.frequency()}}
                   .dump()
            << "\n";
      }
    } else {
      Dataset dataset = load_dataset(run.file("dataset.jsonl"));
      std::map<std::string, Label> labels;
      for (const auto& s : dataset.samples) labels[s.id] = s.label;
      std::map<std::string, PresenceAnnotation> annotations;
      std::ifstream in(dp_annotations);
      if (!in) {
        throw Error(ErrorCode::precondition,
                    "cannot read annotations: " + dp_annotations);
      }
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        json record = json::parse(line);
        PresenceAnnotation ann;
        ann.criterion_text = record.at("criterion").get<std::string>();
        for (const auto& [id, presence] : record.at("presences").items()) {
          std::string p = presence.get<std::string>();
          ann.by_sample[id] = p == "present" ? Presence::present
                              : p == "absent" ? Presence::absent
                                              : Presence::not_applicable;
        }
        annotations[ann.criterion_text] = std::move(ann);
      }
      for (const auto& c : criteria) {
        auto it = annotations.find(c.text);
        if (it == annotations.end()) continue;
        DpRecord record = dp_score(c, it->second, labels);
        out << json{{"criterion", record.criterion_text},
                    {"dp", record.dp},
                    {"n_used", record.n_used}}
                   .dump()
            << "\n";
      }
    }
    std::cout << "wrote eval_dp.jsonl\n";
  });

  std::string reference_file;
  std::string overrides_file;
  auto* eval_recall = eval->add_subcommand("recall", "Recall vs reference");
  eval_recall->add_option("--reference", reference_file, "Reference JSONL")
      ->required();
  eval_recall->add_option("--overrides", overrides_file, "Override JSONL");
  eval_recall->callback([&] {
    RunDir run(run_dir);
    RunManifest manifest = run.load_manifest();
    auto gateway = open_gateway(run, manifest.config, backend_flag);
    auto reference = ReferenceCriteria::from_jsonl_file(reference_file);
    std::map<std::string, bool> overrides;
    if (!overrides_file.empty()) overrides = load_overrides(overrides_file);
    RecallResult result = recall(reference, load_selected(run), *gateway,
                                 prompts, overrides);
    json verdicts = json::array();
    for (const auto& v : result.verdicts) {
      verdicts.push_back({{"reference_item", v.reference_item},
                          {"matched", v.matched()},
                          {"overridden", v.overridden},
                          {"matched_criteria", v.matched_criteria}});
    }
    std::ofstream out(run.file("eval_recall.json"));
    out << json{{"recall", result.recall}, {"verdicts", verdicts}}.dump(2)
        << "\n";
    run.save_ledger(gateway->ledger());
    std::cout << "recall " << result.recall << "\n";
  });

  auto* eval_sweep = eval->add_subcommand("sweep", "Threshold sweep");
  std::string axis_text = "prominence";
  eval_sweep->add_option("--reference", reference_file, "Reference JSONL")
      ->required();
  eval_sweep->add_option("--axis", axis_text, "prominence or frequency")
      ->capture_default_str();
  eval_sweep->callback([&] {
    RunDir run(run_dir);
    RunManifest manifest = run.load_manifest();
    auto gateway = open_gateway(run, manifest.config, backend_flag);
    auto reference = ReferenceCriteria::from_jsonl_file(reference_file);
    SweepAxis axis = axis_text == "frequency" ? SweepAxis::frequency
                                              : SweepAxis::prominence;
    std::vector<Criterion> criteria =
        load_criteria(run.file("stage4_criteria.jsonl"));
    auto rows = threshold_sweep(criteria, reference, *gateway, prompts, axis);
    {
      std::ofstream out(run.file("eval_sweep.csv"));
      out << sweep_to_csv(rows);
    }
    {
      json dropped = json::array();
      for (const auto& row : rows) {
        dropped.push_back({{"threshold", row.threshold},
                           {"dropped", row.dropped}});
      }
      std::ofstream out(run.file("eval_sweep_dropped.json"));
      out << dropped.dump(2) << "\n";
    }
    run.save_ledger(gateway->ledger());
    std::cout << "wrote eval_sweep.csv (" << rows.size() << " rows)\n";
  });

  auto* eval_consistency =
      eval->add_subcommand("consistency", "Self-audit of recorded decisions");
  std::string stage_text = "values";
  eval_consistency
      ->add_option("--stage", stage_text, "values, clusters or verbalizations")
      ->capture_default_str();
  eval_consistency->callback([&] {
    RunDir run(run_dir);
    RunManifest manifest = run.load_manifest();
    auto gateway = open_gateway(run, manifest.config, backend_flag);
    AuditArtifacts artifacts;
    AssignmentTable table;
    std::vector<ClusterScheme> schemes;
    std::vector<Criterion> criteria;
    AuditStage stage;
    if (stage_text == "values") {
      stage = AuditStage::values;
      table = load_assignments(run.file("stage2_values.jsonl"));
      artifacts.table = &table;
    } else if (stage_text == "clusters") {
      stage = AuditStage::clusters;
      schemes = load_schemes(run.file("stage3_schemes.jsonl"));
      artifacts.schemes = &schemes;
    } else if (stage_text == "verbalizations") {
      stage = AuditStage::verbalizations;
      criteria = load_criteria(run.file("stage4_criteria.jsonl"));
      artifacts.criteria = &criteria;
    } else {
      throw Error(ErrorCode::precondition, "unknown stage: " + stage_text);
    }
    AuditResult result = consistency_audit(stage, artifacts, *gateway, prompts);
    json transcripts = json::array();
    for (const auto& t : result.transcripts) {
      transcripts.push_back({{"item", t.item},
                             {"answer", t.answer},
                             {"confirmed", t.confirmed}});
    }
    std::ofstream out(run.file("eval_consistency.json"));
    out << json{{"stage", stage_text},
                {"rate", result.rate},
                {"transcripts", transcripts}}
               .dump(2)
        << "\n";
    run.save_ledger(gateway->ledger());
    std::cout << "consistency rate " << result.rate << "\n";
  });

  // baseline
  auto* baseline = app.add_subcommand("baseline", "Direct-generation baseline");
  std::string variant_text;
  baseline->add_option("variant", variant_text,
                       "PosData|MixedData|FlippedPosData|FlippedMixedData|"
                       "NoData|NoContext")
      ->required();
  baseline->callback([&] {
    RunDir run(run_dir);
    RunManifest manifest = run.load_manifest();
    auto gateway = open_gateway(run, manifest.config, backend_flag);
    BaselineVariant variant = baseline_variant_from_name(variant_text);
    Dataset dataset = load_dataset(run.file("dataset.jsonl"));
    auto features = run_baseline(variant, dataset, *gateway, prompts);
    std::ofstream out(
        run.file("baseline_" + baseline_variant_name(variant) + ".json"));
    out << json{{"variant", baseline_variant_name(variant)},
                {"features", features}}
               .dump(2)
        << "\n";
    run.save_ledger(gateway->ledger());
    std::cout << features.size() << " features\n";
  });

  // classify
  auto* classify_cmd =
      app.add_subcommand("classify", "Criteria-driven classification demo");
  int classify_top = 5;
  classify_cmd->add_option("--top", classify_top, "Criteria count")
      ->capture_default_str();
  classify_cmd->callback([&] {
    RunDir run(run_dir);
    RunManifest manifest = run.load_manifest();
    auto gateway = open_gateway(run, manifest.config, backend_flag);
    Dataset dataset = load_dataset(run.file("dataset.jsonl"));
    std::vector<Criterion> selected = load_selected(run);
    if (selected.size() > static_cast<std::size_t>(classify_top)) {
      selected.resize(static_cast<std::size_t>(classify_top));
    }
    int correct = 0;
    int total = 0;
    json rows = json::array();
    for (const auto& sample : dataset.samples) {
      ClassifyResult result = classify(sample, selected, *gateway, prompts);
      if (sample.label != Label::unlabeled) {
        ++total;
        if (result.label == sample.label) ++correct;
      }
      rows.push_back({{"id", sample.id},
                      {"predicted", label_name(result.label)},
                      {"actual", label_name(sample.label)},
                      {"score", result.score}});
    }
    double accuracy = total > 0 ? static_cast<double>(correct) / total : 0.0;
    std::ofstream out(run.file("classify_report.json"));
    out << json{{"criteria_used", static_cast<int>(selected.size())},
                {"accuracy", accuracy},
                {"rows", rows}}
               .dump(2)
        << "\n";
    run.save_ledger(gateway->ledger());
    std::cout << "accuracy " << accuracy << " over " << total << " samples\n";
  });

  CLI11_PARSE(app, argc, argv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const dsai::Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return err.exit_code();
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
}
