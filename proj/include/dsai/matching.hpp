#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dsai/corpus.hpp"
#include "dsai/perspectives.hpp"

namespace dsai {

class Gateway;
class PromptRegistry;

// The literal token N/A marks a perspective as non-applicable to a sample.
inline constexpr const char* kNotApplicable = "N/A";

struct ValueAssignment {
  std::string sample_id;
  std::string perspective_id;
  std::string value;  // normalized, or kNotApplicable

  bool is_na() const { return value == kNotApplicable; }
  bool operator==(const ValueAssignment&) const = default;
};

struct AssignmentTable {
  std::vector<ValueAssignment> assignments;
  std::size_t n_samples = 0;
  std::size_t n_perspectives = 0;
};

// One call per (sample, perspective batch); every presented perspective must
// receive a value.
AssignmentTable match_values(const Dataset& dataset,
                             const PerspectiveSet& perspectives,
                             Gateway& gateway, const PromptRegistry& prompts,
                             int batch = 3);

// Non-NA assignments for one perspective, in sample order.
std::vector<std::pair<std::string, std::string>> values_for(
    const AssignmentTable& table, const std::string& perspective_id);

void save_assignments(const AssignmentTable& table,
                      const std::filesystem::path& path);
AssignmentTable load_assignments(const std::filesystem::path& path);

}  // namespace dsai
