#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "dsai/clustering.hpp"
#include "dsai/corpus.hpp"
#include "dsai/perspectives.hpp"

namespace dsai {

class Gateway;
class PromptRegistry;

enum class Phrasing { direct, avoid };

struct Criterion {
  std::string text;
  std::string perspective_id;
  std::string label;
  double direction_score = 0.0;  // 2 * P(positive | D_{p,l}) - 1
  double prominence = 0.0;       // |direction_score|
  int frequency = 0;             // |D_{p,l}|
  Phrasing phrasing = Phrasing::direct;
  std::vector<std::string> member_ids;
};

struct SelectionConfig {
  double min_prominence = 0.0;
  int min_frequency = 7;  // encodes |D_{p,l}| > 6
  bool require_positive_prominence = true;
};

// 2 * pos/(pos+neg) - 1, exact to the double division.
double directional_score(const FeatureCell& cell);

// Backend rewrites the pair into one imperative sentence; negative direction
// mandates an avoid-statement.
Criterion verbalize(const FeatureCell& cell, const Perspective& perspective,
                    Gateway& gateway, const PromptRegistry& prompts);

// Filters by prominence/frequency, sorted (prominence desc, frequency desc,
// text asc).
std::vector<Criterion> select(const std::vector<Criterion>& criteria,
                              const SelectionConfig& config);

struct TraceRow {
  std::string sample_id;
  std::string text;
  Label label;
};

std::vector<TraceRow> trace(const Criterion& criterion, const Dataset& dataset);

struct ReportRow {
  std::string text;
  double prominence = 0.0;
  int frequency = 0;
};

struct FrequencyBucket {
  int lo = 0;
  int hi = 0;  // inclusive; hi == 0 means unbounded
  int count = 0;
  double mean_prominence = 0.0;
};

struct Report {
  std::vector<ReportRow> top;
  std::vector<ReportRow> bottom;  // k lowest, listed prominence-descending
  std::array<int, 10> prominence_histogram{};  // bins [0,0.1), ..., [0.9,1.0]
  std::vector<FrequencyBucket> frequency_buckets;

  std::string to_text() const;
  std::string to_json() const;
};

Report report(const std::vector<Criterion>& criteria, int k);

void save_criteria(const std::vector<Criterion>& criteria,
                   const std::filesystem::path& path);
std::vector<Criterion> load_criteria(const std::filesystem::path& path);

std::string format_prominence(double prominence);  // fixed 4 d.p.

}  // namespace dsai
