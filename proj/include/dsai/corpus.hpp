#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dsai {

class Gateway;

enum class Label { positive, negative, unlabeled };

std::string label_name(Label label);
Label label_from_name(const std::string& name);
Label flip(Label label);

struct Sample {
  std::string id;
  std::string text;
  Label label = Label::unlabeled;

  bool operator==(const Sample&) const = default;
};

// Samples keep ingestion order; ids are unique.
struct Dataset {
  std::string name;
  std::vector<Sample> samples;

  bool operator==(const Dataset&) const = default;

  const Sample* find(const std::string& id) const;
  std::size_t count(Label label) const;
  Dataset flipped() const;
};

// Presence/absence of each criterion per sample, plus the per-sample score
// (number of present cells).
struct AnnotationMatrix {
  std::vector<std::string> criteria;
  // cells[sample_id][criterion_index] = present?
  std::map<std::string, std::vector<bool>> cells;

  int score(const std::string& sample_id) const;
};

// JSON-lines: one object per line with fields id, text, optional label.
// Unknown fields are rejected.
Dataset load_dataset(const std::filesystem::path& path);
Dataset parse_dataset(const std::string& content, const std::string& name);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

AnnotationMatrix annotate_with_criteria(const Dataset& dataset,
                                        const std::vector<std::string>& criteria,
                                        Gateway& judge);

void save_annotation(const AnnotationMatrix& matrix,
                     const std::filesystem::path& path);

// Top-k become positive, bottom-k negative; ties broken by (score, id asc).
Dataset split_top_bottom(const AnnotationMatrix& matrix, const Dataset& dataset,
                         int k);

// Seeded draw of n_pos positives and n_neg negatives.
std::vector<Sample> sample_subset(const Dataset& dataset, int n_pos, int n_neg,
                                  std::uint64_t seed);

}  // namespace dsai
