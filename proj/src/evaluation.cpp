#include "dsai/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "dsai/error.hpp"
#include "dsai/gateway.hpp"
#include "dsai/prompts.hpp"
#include "dsai/textutil.hpp"
#include "json.hpp"

namespace dsai {

using nlohmann::json;

ReferenceCriteria ReferenceCriteria::from_jsonl_file(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::precondition,
                "cannot read reference criteria: " + path.string());
  }
  ReferenceCriteria reference;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    json record = json::parse(line);
    reference.name = record.at("name").get<std::string>();
    for (const auto& item : record.at("items")) {
      reference.items.push_back(item.get<std::string>());
    }
  }
  std::set<std::string> unique(reference.items.begin(), reference.items.end());
  if (unique.size() != reference.items.size()) {
    throw Error(ErrorCode::precondition, "reference items must be unique");
  }
  return reference;
}

std::map<std::string, bool> load_overrides(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::precondition,
                "cannot read overrides: " + path.string());
  }
  std::map<std::string, bool> overrides;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    json record = json::parse(line);
    overrides[record.at("reference_item").get<std::string>()] =
        record.at("verdict").get<std::string>() == "matched";
  }
  return overrides;
}

DpRecord dp_score(const Criterion& criterion, const PresenceAnnotation& ann,
                  const std::map<std::string, Label>& labels) {
  if (criterion.direction_score == 0.0) {
    throw Error(ErrorCode::precondition,
                "dp_score requires a nonzero direction");
  }
  bool positive_direction = criterion.direction_score > 0;
  Presence conditioning =
      positive_direction ? Presence::present : Presence::absent;
  Label favoured = positive_direction ? Label::positive : Label::negative;

  int in_event = 0;
  int favoured_in_event = 0;
  int used = 0;
  for (const auto& [sample_id, presence] : ann.by_sample) {
    if (presence == Presence::not_applicable) continue;
    auto it = labels.find(sample_id);
    if (it == labels.end()) {
      throw Error(ErrorCode::precondition,
                  "annotated sample has no label: " + sample_id);
    }
    ++used;
    if (presence != conditioning) continue;
    ++in_event;
    if (it->second == favoured) ++favoured_in_event;
  }
  if (used == 0) {
    throw Error(ErrorCode::precondition,
                "annotation covers no applicable sample");
  }
  if (in_event == 0) {
    throw Error(ErrorCode::dp_empty_event,
                "empty conditioning event for: " + criterion.text);
  }
  return {criterion.text, static_cast<double>(favoured_in_event) / in_event,
          used};
}

double self_dp(const FeatureCell& cell) {
  int n = cell.frequency();
  if (n <= 0) {
    throw Error(ErrorCode::precondition, "self_dp of an empty cell");
  }
  double direction = static_cast<double>(2 * cell.pos_count - n) / n;
  if (direction == 0.0) {
    throw Error(ErrorCode::precondition, "self_dp requires nonzero direction");
  }
  // Presence == membership in D_{p,l}; for both directions this is the
  // favoured-class ratio inside the cell, i.e. (1 + prominence) / 2.
  int favoured = direction > 0 ? cell.pos_count : cell.neg_count;
  return static_cast<double>(favoured) / n;
}

std::vector<std::vector<const Criterion*>> bucket_sample(
    const std::vector<Criterion>& criteria, int buckets, int per_bucket,
    std::uint64_t seed) {
  if (buckets < 1 || per_bucket < 1) {
    throw Error(ErrorCode::precondition, "buckets and per_bucket must be >= 1");
  }
  std::vector<std::vector<const Criterion*>> binned(
      static_cast<std::size_t>(buckets));
  for (const auto& c : criteria) {
    int b = std::min(buckets - 1,
                     static_cast<int>(c.prominence * buckets));
    binned[static_cast<std::size_t>(b)].push_back(&c);
  }
  std::mt19937_64 rng(seed);
  for (auto& bucket : binned) {
    std::vector<const Criterion*> sampled;
    while (!bucket.empty() &&
           sampled.size() < static_cast<std::size_t>(per_bucket)) {
      std::size_t j = rng() % bucket.size();
      sampled.push_back(bucket[j]);
      bucket.erase(bucket.begin() + static_cast<std::ptrdiff_t>(j));
    }
    bucket = std::move(sampled);
  }
  return binned;
}

namespace {

std::string render_candidates(const std::vector<const Criterion*>& batch) {
  std::ostringstream out;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out << (i + 1) << ". " << batch[i]->text << "\n";
  }
  return out.str();
}

// Verdict lines "<number>: yes|no" for one batch. Missing or unparsable
// entries are retried once, then counted as "no".
std::vector<bool> judge_batch(const std::string& reference_item,
                              const std::vector<const Criterion*>& batch,
                              Gateway& judge, const PromptRegistry& prompts) {
  auto ask = [&](const std::string& retry_note) {
    ChatRequest request;
    request.tag = "eval_recall";
    request.messages = {{Role::user,
                         prompts.render("recall_match",
                                        {{"reference", reference_item},
                                         {"candidates", render_candidates(batch)},
                                         {"retry_note", retry_note}})}};
    std::map<std::size_t, bool> verdicts;
    std::string text;
    try {
      text = judge.complete(request).text;
    } catch (const Error&) {
      return verdicts;  // conservative: treated as all-missing
    }
    for (const auto& raw : split_lines(text)) {
      std::string line = trim(raw);
      auto colon = line.find(':');
      if (colon == std::string::npos) continue;
      std::size_t index = 0;
      try {
        index = static_cast<std::size_t>(std::stoul(trim(line.substr(0, colon))));
      } catch (...) {
        continue;
      }
      std::string verdict = normalize(line.substr(colon + 1));
      if (index >= 1 && index <= batch.size() &&
          (verdict == "yes" || verdict == "no")) {
        verdicts[index - 1] = verdict == "yes";
      }
    }
    return verdicts;
  };

  auto verdicts = ask("");
  if (verdicts.size() < batch.size()) {
    auto retry = ask("Reminder: one \"<number>: yes\" or \"<number>: no\" "
                     "line per candidate.");
    verdicts.insert(retry.begin(), retry.end());
  }
  std::vector<bool> out(batch.size(), false);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto it = verdicts.find(i);
    if (it == verdicts.end()) {
      std::cerr << "warning: recall judge gave no verdict for candidate "
                << (i + 1) << "; counting as unmatched\n";
    } else {
      out[i] = it->second;
    }
  }
  return out;
}

}  // namespace

std::vector<MatchVerdict> match_matrix(const ReferenceCriteria& reference,
                                       const std::vector<Criterion>& generated,
                                       Gateway& judge,
                                       const PromptRegistry& prompts,
                                       int batch) {
  if (batch < 1) {
    throw Error(ErrorCode::precondition, "batch must be >= 1");
  }
  std::vector<MatchVerdict> verdicts;
  for (const auto& item : reference.items) {
    MatchVerdict verdict;
    verdict.reference_item = item;
    for (std::size_t start = 0; start < generated.size();
         start += static_cast<std::size_t>(batch)) {
      std::vector<const Criterion*> chunk;
      for (std::size_t i = start;
           i < generated.size() && i < start + static_cast<std::size_t>(batch);
           ++i) {
        chunk.push_back(&generated[i]);
      }
      std::vector<bool> matched = judge_batch(item, chunk, judge, prompts);
      for (std::size_t i = 0; i < chunk.size(); ++i) {
        if (matched[i]) verdict.matched_criteria.push_back(chunk[i]->text);
      }
    }
    verdicts.push_back(std::move(verdict));
  }
  return verdicts;
}

RecallResult recall(const ReferenceCriteria& reference,
                    const std::vector<Criterion>& generated, Gateway& judge,
                    const PromptRegistry& prompts,
                    const std::map<std::string, bool>& overrides) {
  RecallResult result;
  if (reference.items.empty()) return result;

  // Judge only the items without an override.
  ReferenceCriteria to_judge;
  to_judge.name = reference.name;
  for (const auto& item : reference.items) {
    if (!overrides.contains(item)) to_judge.items.push_back(item);
  }
  std::map<std::string, MatchVerdict> judged;
  if (!generated.empty() && !to_judge.items.empty()) {
    for (auto& v : match_matrix(to_judge, generated, judge, prompts)) {
      judged[v.reference_item] = std::move(v);
    }
  }

  int matched = 0;
  for (const auto& item : reference.items) {
    MatchVerdict verdict;
    verdict.reference_item = item;
    if (auto it = overrides.find(item); it != overrides.end()) {
      verdict.overridden = true;
      verdict.forced = it->second;
    } else if (auto jt = judged.find(item); jt != judged.end()) {
      verdict = std::move(jt->second);
    }
    if (verdict.matched()) ++matched;
    result.verdicts.push_back(std::move(verdict));
  }
  result.recall =
      static_cast<double>(matched) / static_cast<double>(reference.items.size());
  return result;
}

namespace {

double axis_value(const Criterion& c, SweepAxis axis) {
  return axis == SweepAxis::prominence ? c.prominence
                                       : static_cast<double>(c.frequency);
}

double round3(double x) { return std::round(x * 1000.0) / 1000.0; }

}  // namespace

std::vector<SweepRow> threshold_sweep(const std::vector<Criterion>& criteria,
                                      const ReferenceCriteria& reference,
                                      Gateway& judge,
                                      const PromptRegistry& prompts,
                                      SweepAxis axis) {
  // One judging pass over the full set; retained-set recall is then a pure
  // function of the thresholds.
  std::vector<MatchVerdict> matrix;
  if (!criteria.empty() && !reference.items.empty()) {
    matrix = match_matrix(reference, criteria, judge, prompts);
  }
  std::map<std::string, std::vector<const Criterion*>> matches_by_item;
  std::map<std::string, const Criterion*> by_text;
  for (const auto& c : criteria) by_text[c.text] = &c;
  for (const auto& v : matrix) {
    for (const auto& text : v.matched_criteria) {
      matches_by_item[v.reference_item].push_back(by_text.at(text));
    }
  }

  auto recall_at = [&](double threshold) {
    if (reference.items.empty()) return 0.0;
    int matched = 0;
    for (const auto& item : reference.items) {
      auto it = matches_by_item.find(item);
      if (it == matches_by_item.end()) continue;
      for (const auto* c : it->second) {
        if (axis_value(*c, axis) >= threshold) {
          ++matched;
          break;
        }
      }
    }
    return static_cast<double>(matched) /
           static_cast<double>(reference.items.size());
  };

  std::vector<double> thresholds;
  for (const auto& c : criteria) thresholds.push_back(axis_value(c, axis));
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());

  std::vector<SweepRow> rows;
  std::set<std::string> previously_retained;
  for (const auto& c : criteria) previously_retained.insert(c.text);

  auto emit = [&](double threshold) {
    SweepRow row;
    row.threshold = threshold;
    std::set<std::string> retained;
    for (const auto& c : criteria) {
      if (axis_value(c, axis) >= threshold) retained.insert(c.text);
    }
    row.size = static_cast<int>(retained.size());
    row.recall = round3(recall_at(threshold));
    for (const auto& text : previously_retained) {
      if (!retained.contains(text)) row.dropped.push_back(text);
    }
    previously_retained = std::move(retained);
    rows.push_back(std::move(row));
  };

  for (double t : thresholds) emit(t);

  // Terminal empty-set row, when reachable within the axis range.
  if (!thresholds.empty()) {
    double max_value = thresholds.back();
    if (axis == SweepAxis::prominence) {
      if (max_value < 1.0) emit(1.0);
    } else {
      emit(max_value + 1.0);
    }
  }
  return rows;
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "recall,threshold,size\n";
  for (const auto& row : rows) {
    json recall_j = row.recall;      // shortest round-trip formatting
    json threshold_j = row.threshold;
    out << recall_j.dump() << "," << threshold_j.dump() << "," << row.size
        << "\n";
  }
  return out.str();
}

AuditResult consistency_audit(AuditStage stage, const AuditArtifacts& artifacts,
                              Gateway& gateway, const PromptRegistry& prompts) {
  std::vector<std::pair<std::string, std::string>> items;  // (id, decision)
  switch (stage) {
    case AuditStage::values: {
      if (!artifacts.table) {
        throw Error(ErrorCode::precondition, "audit: missing assignment table");
      }
      for (const auto& a : artifacts.table->assignments) {
        if (a.is_na()) continue;
        items.emplace_back(
            a.sample_id + "/" + a.perspective_id,
            "Recorded value matching: sample " + a.sample_id +
                " was assigned value \"" + a.value + "\" under perspective " +
                a.perspective_id + ".");
      }
      break;
    }
    case AuditStage::clusters: {
      if (!artifacts.schemes) {
        throw Error(ErrorCode::precondition, "audit: missing cluster schemes");
      }
      for (const auto& s : *artifacts.schemes) {
        for (const auto& [value, label] : s.assignment) {
          if (label == kUnassignedLabel) continue;
          items.emplace_back(s.perspective_id + "/" + value,
                             "Recorded clustering: value \"" + value +
                                 "\" was assigned to cluster label \"" + label +
                                 "\" under perspective " + s.perspective_id +
                                 ".");
        }
      }
      break;
    }
    case AuditStage::verbalizations: {
      if (!artifacts.criteria) {
        throw Error(ErrorCode::precondition, "audit: missing criteria");
      }
      for (const auto& c : *artifacts.criteria) {
        items.emplace_back(
            c.perspective_id + "/" + c.label,
            "Recorded verbalization: (" + c.perspective_id + ", " + c.label +
                ") with " +
                std::string(c.phrasing == Phrasing::avoid ? "avoid" : "direct") +
                " phrasing was verbalized as \"" + c.text + "\".");
      }
      break;
    }
  }
  if (items.empty()) {
    throw Error(ErrorCode::precondition, "audit: no artifacts for stage");
  }

  AuditResult result;
  int confirmed = 0;
  for (const auto& [id, decision] : items) {
    // Fresh session: a single user message, no prior turns.
    std::string prompt = prompts.render("audit", {{"decision", decision}});
    ChatRequest request;
    request.tag = "eval_consistency";
    request.messages = {{Role::user, prompt}};
    AuditTranscript transcript;
    transcript.item = id;
    transcript.prompt = prompt;
    try {
      transcript.answer = gateway.complete(request).text;
    } catch (const Error&) {
      transcript.answer = "";
    }
    transcript.confirmed = normalize(transcript.answer) == "yes";
    if (transcript.confirmed) ++confirmed;
    result.transcripts.push_back(std::move(transcript));
  }
  result.rate = static_cast<double>(confirmed) /
                static_cast<double>(result.transcripts.size());
  return result;
}

BaselineVariant baseline_variant_from_name(const std::string& name) {
  std::string n = normalize(name);
  if (n == "posdata") return BaselineVariant::pos_data;
  if (n == "mixeddata") return BaselineVariant::mixed_data;
  if (n == "flippedposdata") return BaselineVariant::flipped_pos_data;
  if (n == "flippedmixeddata") return BaselineVariant::flipped_mixed_data;
  if (n == "nodata") return BaselineVariant::no_data;
  if (n == "nocontext") return BaselineVariant::no_context;
  throw Error(ErrorCode::precondition, "unknown baseline variant: " + name);
}

std::string baseline_variant_name(BaselineVariant variant) {
  switch (variant) {
    case BaselineVariant::pos_data: return "PosData";
    case BaselineVariant::mixed_data: return "MixedData";
    case BaselineVariant::flipped_pos_data: return "FlippedPosData";
    case BaselineVariant::flipped_mixed_data: return "FlippedMixedData";
    case BaselineVariant::no_data: return "NoData";
    case BaselineVariant::no_context: return "NoContext";
  }
  return "?";
}

namespace {

std::string render_group(const Dataset& dataset, Label label) {
  std::ostringstream out;
  for (const auto& s : dataset.samples) {
    if (s.label == label) out << "- " << s.text << "\n";
  }
  return out.str();
}

}  // namespace

std::string build_baseline_prompt(BaselineVariant variant,
                                  const Dataset& dataset,
                                  const PromptRegistry& prompts,
                                  const std::string& retry_note) {
  switch (variant) {
    case BaselineVariant::pos_data:
      return prompts.render("baseline_posdata",
                            {{"positives", render_group(dataset, Label::positive)},
                             {"retry_note", retry_note}});
    case BaselineVariant::mixed_data:
      return prompts.render(
          "baseline_mixeddata",
          {{"group_high", render_group(dataset, Label::positive)},
           {"group_low", render_group(dataset, Label::negative)},
           {"retry_note", retry_note}});
    case BaselineVariant::flipped_pos_data:
      return build_baseline_prompt(BaselineVariant::pos_data,
                                   dataset.flipped(), prompts, retry_note);
    case BaselineVariant::flipped_mixed_data:
      return build_baseline_prompt(BaselineVariant::mixed_data,
                                   dataset.flipped(), prompts, retry_note);
    case BaselineVariant::no_data:
      return prompts.render("baseline_nodata", {{"retry_note", retry_note}});
    case BaselineVariant::no_context:
      return prompts.render(
          "baseline_nocontext",
          {{"group_a", render_group(dataset, Label::positive)},
           {"group_b", render_group(dataset, Label::negative)},
           {"retry_note", retry_note}});
  }
  throw Error(ErrorCode::precondition, "unknown baseline variant");
}

std::vector<std::string> run_baseline(BaselineVariant variant,
                                      const Dataset& dataset, Gateway& gateway,
                                      const PromptRegistry& prompts) {
  if (variant != BaselineVariant::no_data) {
    bool labeled = std::all_of(
        dataset.samples.begin(), dataset.samples.end(),
        [](const Sample& s) { return s.label != Label::unlabeled; });
    if (!labeled) {
      throw Error(ErrorCode::precondition,
                  "baseline needs a fully labeled dataset");
    }
  }

  auto ask = [&](const std::string& retry_note) {
    ChatRequest request;
    request.tag = "baseline_" + baseline_variant_name(variant);
    request.messages = {
        {Role::user, build_baseline_prompt(variant, dataset, prompts,
                                           retry_note)}};
    std::vector<std::string> features;
    for (const auto& raw : split_lines(gateway.complete(request).text)) {
      std::string line = trim(raw);
      if (line.rfind("- ", 0) == 0) {
        std::string feature = trim(line.substr(2));
        if (!feature.empty()) features.push_back(feature);
      }
    }
    return features;
  };

  std::vector<std::string> features = ask("");
  if (features.empty()) {
    features = ask("Reminder: list one feature per line starting with \"- \".");
  }
  if (features.empty()) {
    throw Error(ErrorCode::baseline,
                "unparsable feature list for " + baseline_variant_name(variant));
  }
  return features;
}

ClassifyResult classify(const Sample& sample,
                        const std::vector<Criterion>& criteria, Gateway& judge,
                        const PromptRegistry& prompts) {
  if (criteria.empty()) {
    throw Error(ErrorCode::precondition, "classify needs criteria");
  }
  ClassifyResult result;
  for (const auto& c : criteria) {
    ChatRequest request;
    request.tag = "eval_classify";
    request.messages = {{Role::user,
                         prompts.render("classify_check",
                                        {{"criterion", c.text},
                                         {"text", sample.text}})}};
    ClassifyVerdict verdict;
    verdict.criterion_text = c.text;
    try {
      verdict.satisfied = normalize(judge.complete(request).text) == "satisfied";
    } catch (const Error&) {
      std::cerr << "warning: classify judge failed for criterion \"" << c.text
                << "\"; counting as unsatisfied\n";
      verdict.satisfied = false;
    }
    if (verdict.satisfied) ++result.score;
    result.verdicts.push_back(std::move(verdict));
  }
  // Ties go negative.
  result.label = 2 * result.score > static_cast<int>(criteria.size())
                     ? Label::positive
                     : Label::negative;
  return result;
}

}  // namespace dsai
