#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "dsai/corpus.hpp"
#include "dsai/matching.hpp"
#include "dsai/perspectives.hpp"

namespace dsai {

class Gateway;
class PromptRegistry;

// Values whose cluster label could not be resolved land here; they are
// flagged in reports and never produce cells.
inline constexpr const char* kUnassignedLabel = "__unassigned__";

struct ClusterScheme {
  std::string perspective_id;
  std::vector<std::string> labels;
  std::map<std::string, std::string> assignment;  // value -> label
};

// D_{p,l}: the samples whose value under perspective p maps to label l.
struct FeatureCell {
  std::string perspective_id;
  std::string label;
  std::vector<std::string> member_ids;
  int pos_count = 0;
  int neg_count = 0;

  int frequency() const { return pos_count + neg_count; }
  double positive_ratio() const {
    return static_cast<double>(pos_count) / frequency();
  }
};

// Distinct value with its occurrence count, passed to the backend as a hint.
struct ValueCount {
  std::string value;
  int count = 0;
};

// Distinct non-NA values of a perspective in first-seen order.
std::vector<ValueCount> distinct_values(const AssignmentTable& table,
                                        const std::string& perspective_id);

std::vector<std::string> generate_cluster_labels(
    const Perspective& perspective, const std::vector<ValueCount>& values,
    Gateway& gateway, const PromptRegistry& prompts);

ClusterScheme assign_values_to_clusters(const Perspective& perspective,
                                        const std::vector<ValueCount>& values,
                                        const std::vector<std::string>& labels,
                                        Gateway& gateway,
                                        const PromptRegistry& prompts);

std::vector<FeatureCell> build_cells(const AssignmentTable& table,
                                     const std::vector<ClusterScheme>& schemes,
                                     const Dataset& dataset);

void save_schemes(const std::vector<ClusterScheme>& schemes,
                  const std::filesystem::path& path);
std::vector<ClusterScheme> load_schemes(const std::filesystem::path& path);
void save_cells(const std::vector<FeatureCell>& cells,
                const std::filesystem::path& path);
std::vector<FeatureCell> load_cells(const std::filesystem::path& path);

}  // namespace dsai
