#pragma once

#include <span>
#include <string>
#include <vector>

#include "dsai/corpus.hpp"

namespace dsai {

class Gateway;
class PromptRegistry;

struct Perspective {
  std::string id;  // slug of name, unique within a set
  std::string name;
  std::string criterion;
  std::string process;
  std::string example;
  int origin_step = 0;

  bool operator==(const Perspective&) const = default;
};

struct GenerationConfig {
  int per_step = 50;
  int steps = 3;
  double temperature = 1.0;
  // Prompts must stay free of task context: dataset name, these words, and
  // the quality labels the baselines use.
  std::string dataset_name;
  std::vector<std::string> blocklist;
};

struct PerspectiveSet {
  std::vector<Perspective> perspectives;
  GenerationConfig config;
};

// Parses NAME/CRITERION/PROCESS/EXAMPLE blocks; records missing a field are
// dropped. Exposed for tests.
std::vector<Perspective> parse_perspective_blocks(const std::string& text,
                                                  int origin_step);

// The step prompt: previously accepted perspectives plus the unlabeled
// subset, task context withheld. Exposed so tests can scan it.
std::string build_generation_prompt(const PromptRegistry& prompts,
                                    std::span<const Sample> subset,
                                    const std::vector<Perspective>& previous,
                                    int per_step,
                                    const std::string& retry_note);

// Throws Error(stage) when a prompt violates the context-hiding policy.
void check_context_hidden(const std::string& prompt,
                          const GenerationConfig& config);

PerspectiveSet generate_perspectives(std::span<const Sample> subset,
                                     const GenerationConfig& config,
                                     Gateway& gateway,
                                     const PromptRegistry& prompts);

// Exact-duplicate removal by normalized name, then pairwise backend verdicts
// against the kept set. The earlier perspective always survives.
PerspectiveSet dedup_perspectives(const PerspectiveSet& set, Gateway& gateway,
                                  const PromptRegistry& prompts);

void save_perspectives(const PerspectiveSet& set,
                       const std::filesystem::path& path);
PerspectiveSet load_perspectives(const std::filesystem::path& path);

}  // namespace dsai
