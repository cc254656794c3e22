#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dsai/clustering.hpp"
#include "dsai/corpus.hpp"
#include "dsai/criteria.hpp"
#include "dsai/matching.hpp"

namespace dsai {

class Gateway;
class PromptRegistry;

enum class Presence { present, absent, not_applicable };

struct PresenceAnnotation {
  std::string criterion_text;
  std::map<std::string, Presence> by_sample;
};

struct DpRecord {
  std::string criterion_text;
  double dp = 0.0;
  int n_used = 0;  // samples left after excluding not_applicable
};

struct ReferenceCriteria {
  std::string name;
  std::vector<std::string> items;

  static ReferenceCriteria from_jsonl_file(const std::filesystem::path& path);
};

struct MatchVerdict {
  std::string reference_item;
  std::vector<std::string> matched_criteria;
  bool overridden = false;

  bool matched() const { return overridden ? forced : !matched_criteria.empty(); }
  bool forced = false;
};

struct RecallResult {
  double recall = 0.0;
  std::vector<MatchVerdict> verdicts;
};

// Manual override file: JSON-lines {reference_item, verdict} with verdict
// "matched"/"unmatched". Takes precedence over the judge.
std::map<std::string, bool> load_overrides(const std::filesystem::path& path);

// DP per the piecewise rule: P(positive|present) for positive direction,
// P(negative|absent) for negative.
DpRecord dp_score(const Criterion& criterion, const PresenceAnnotation& ann,
                  const std::map<std::string, Label>& labels);

// DP under the membership-presence definition; equals (1+prominence)/2.
double self_dp(const FeatureCell& cell);

// Fixed-seed sampler for the prominence-bucket DP study: bins criteria into
// `buckets` equal prominence bands and draws up to `per_bucket` from each.
std::vector<std::vector<const Criterion*>> bucket_sample(
    const std::vector<Criterion>& criteria, int buckets, int per_bucket,
    std::uint64_t seed);

// Which generated criteria express each reference item, judged in batches
// with per-candidate verdicts. Judge failures count as unmatched.
std::vector<MatchVerdict> match_matrix(const ReferenceCriteria& reference,
                                       const std::vector<Criterion>& generated,
                                       Gateway& judge,
                                       const PromptRegistry& prompts,
                                       int batch = 20);

RecallResult recall(const ReferenceCriteria& reference,
                    const std::vector<Criterion>& generated, Gateway& judge,
                    const PromptRegistry& prompts,
                    const std::map<std::string, bool>& overrides = {});

enum class SweepAxis { prominence, frequency };

struct SweepRow {
  double recall = 0.0;          // rounded to 3 decimals
  double threshold = 0.0;
  int size = 0;
  std::vector<std::string> dropped;  // criteria dropped at this threshold
};

// One row per distinct threshold where the retained set changes, plus a
// terminal empty-set row when reachable.
std::vector<SweepRow> threshold_sweep(const std::vector<Criterion>& criteria,
                                      const ReferenceCriteria& reference,
                                      Gateway& judge,
                                      const PromptRegistry& prompts,
                                      SweepAxis axis);

std::string sweep_to_csv(const std::vector<SweepRow>& rows);

enum class AuditStage { values, clusters, verbalizations };

struct AuditTranscript {
  std::string item;
  std::string prompt;
  std::string answer;
  bool confirmed = false;
};

struct AuditResult {
  double rate = 0.0;
  std::vector<AuditTranscript> transcripts;
};

struct AuditArtifacts {
  const AssignmentTable* table = nullptr;          // values
  const std::vector<ClusterScheme>* schemes = nullptr;  // clusters
  const std::vector<Criterion>* criteria = nullptr;     // verbalizations
};

// Re-asks every recorded decision in a fresh session (single user message,
// no shared history). Unparsable verdicts count as unconfirmed.
AuditResult consistency_audit(AuditStage stage, const AuditArtifacts& artifacts,
                              Gateway& gateway, const PromptRegistry& prompts);

enum class BaselineVariant {
  pos_data,
  mixed_data,
  flipped_pos_data,
  flipped_mixed_data,
  no_data,
  no_context,
};

BaselineVariant baseline_variant_from_name(const std::string& name);
std::string baseline_variant_name(BaselineVariant variant);

// The variant's prompt before any backend call; flipped variants relabel the
// dataset and reuse the base builder, so flipped(D) == base(flip(D)) by
// construction.
std::string build_baseline_prompt(BaselineVariant variant,
                                  const Dataset& dataset,
                                  const PromptRegistry& prompts,
                                  const std::string& retry_note = "");

std::vector<std::string> run_baseline(BaselineVariant variant,
                                      const Dataset& dataset, Gateway& gateway,
                                      const PromptRegistry& prompts);

struct ClassifyVerdict {
  std::string criterion_text;
  bool satisfied = false;
};

struct ClassifyResult {
  Label label = Label::negative;
  std::vector<ClassifyVerdict> verdicts;
  int score = 0;
};

// Majority vote over per-criterion judge verdicts; ties go negative.
ClassifyResult classify(const Sample& sample,
                        const std::vector<Criterion>& criteria, Gateway& judge,
                        const PromptRegistry& prompts);

}  // namespace dsai
