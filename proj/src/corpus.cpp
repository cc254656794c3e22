#include "dsai/corpus.hpp"

#include <algorithm>
#include <fstream>
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

std::string label_name(Label label) {
  switch (label) {
    case Label::positive: return "positive";
    case Label::negative: return "negative";
    case Label::unlabeled: return "unlabeled";
  }
  return "unlabeled";
}

Label label_from_name(const std::string& name) {
  if (name == "positive") return Label::positive;
  if (name == "negative") return Label::negative;
  if (name == "unlabeled") return Label::unlabeled;
  throw Error(ErrorCode::ingest_parse, "unknown label: " + name);
}

Label flip(Label label) {
  if (label == Label::positive) return Label::negative;
  if (label == Label::negative) return Label::positive;
  return label;
}

const Sample* Dataset::find(const std::string& id) const {
  for (const auto& s : samples) {
    if (s.id == id) return &s;
  }
  return nullptr;
}

std::size_t Dataset::count(Label label) const {
  return static_cast<std::size_t>(
      std::count_if(samples.begin(), samples.end(),
                    [label](const Sample& s) { return s.label == label; }));
}

Dataset Dataset::flipped() const {
  Dataset out = *this;
  for (auto& s : out.samples) s.label = flip(s.label);
  return out;
}

int AnnotationMatrix::score(const std::string& sample_id) const {
  auto it = cells.find(sample_id);
  if (it == cells.end()) {
    throw Error(ErrorCode::lookup, "unknown sample in matrix: " + sample_id);
  }
  return static_cast<int>(std::count(it->second.begin(), it->second.end(), true));
}

Dataset parse_dataset(const std::string& content, const std::string& name) {
  Dataset dataset;
  dataset.name = name;
  std::set<std::string> seen;
  int line_number = 0;
  std::istringstream in(content);
  std::string line;
  while (std::getline(in, line)) {
    ++line_number;
    if (trim(line).empty()) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::exception& err) {
      throw Error(ErrorCode::ingest_parse,
                  "line " + std::to_string(line_number) + ": " + err.what());
    }
    Sample sample;
    for (const auto& [key, value] : record.items()) {
      if (key == "id") {
        sample.id = value.get<std::string>();
      } else if (key == "text") {
        sample.text = value.get<std::string>();
      } else if (key == "label") {
        std::string label = value.get<std::string>();
        if (label != "positive" && label != "negative") {
          throw Error(ErrorCode::ingest_parse,
                      "line " + std::to_string(line_number) +
                          ": invalid label: " + label);
        }
        sample.label = label_from_name(label);
      } else {
        throw Error(ErrorCode::ingest_parse,
                    "line " + std::to_string(line_number) +
                        ": unknown field: " + key);
      }
    }
    if (sample.id.empty() || trim(sample.text).empty()) {
      throw Error(ErrorCode::ingest_parse,
                  "line " + std::to_string(line_number) +
                      ": id and non-empty text required");
    }
    if (!seen.insert(sample.id).second) {
      throw Error(ErrorCode::ingest_duplicate, "duplicate id: " + sample.id);
    }
    dataset.samples.push_back(std::move(sample));
  }
  if (dataset.samples.empty()) {
    throw Error(ErrorCode::ingest_empty, "dataset has no records: " + name);
  }
  return dataset;
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::precondition,
                "cannot open dataset: " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str(), path.stem().string());
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::precondition,
                "cannot write dataset: " + path.string());
  }
  for (const auto& s : dataset.samples) {
    json record = {{"id", s.id}, {"text", s.text}};
    if (s.label != Label::unlabeled) record["label"] = label_name(s.label);
    out << record.dump() << "\n";
  }
}

AnnotationMatrix annotate_with_criteria(
    const Dataset& dataset, const std::vector<std::string>& criteria,
    Gateway& judge) {
  if (criteria.empty()) {
    throw Error(ErrorCode::precondition, "annotation needs criteria");
  }
  PromptRegistry prompts;
  AnnotationMatrix matrix;
  matrix.criteria = criteria;

  auto ask = [&](const Sample& sample, const std::string& criterion,
                 const std::string& retry_note) {
    ChatRequest request;
    request.tag = "annotate";
    request.messages = {{Role::user,
                         prompts.render("annotate", {{"criterion", criterion},
                                                     {"text", sample.text},
                                                     {"retry_note", retry_note}})}};
    return normalize(judge.complete(request).text);
  };

  for (const auto& sample : dataset.samples) {
    std::vector<bool> row;
    row.reserve(criteria.size());
    for (std::size_t c = 0; c < criteria.size(); ++c) {
      std::string verdict = ask(sample, criteria[c], "");
      if (verdict != "present" && verdict != "absent") {
        verdict = ask(sample, criteria[c],
                      "Reminder: answer with exactly one token, present or "
                      "absent.");
      }
      if (verdict != "present" && verdict != "absent") {
        throw Error(ErrorCode::annotation,
                    "unparsable verdict for sample " + sample.id +
                        " criterion " + std::to_string(c));
      }
      row.push_back(verdict == "present");
    }
    matrix.cells[sample.id] = std::move(row);
  }
  return matrix;
}

void save_annotation(const AnnotationMatrix& matrix,
                     const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::precondition,
                "cannot write annotation: " + path.string());
  }
  for (const auto& [id, row] : matrix.cells) {
    json cells = json::array();
    for (bool present : row) cells.push_back(present ? "present" : "absent");
    int score = static_cast<int>(std::count(row.begin(), row.end(), true));
    out << json{{"id", id}, {"scores", score}, {"cells", cells}}.dump() << "\n";
  }
}

Dataset split_top_bottom(const AnnotationMatrix& matrix, const Dataset& dataset,
                         int k) {
  if (k <= 0) {
    throw Error(ErrorCode::precondition, "k must be positive");
  }
  if (2 * static_cast<std::size_t>(k) > dataset.samples.size()) {
    throw Error(ErrorCode::split_insufficient,
                "2k exceeds dataset size: k=" + std::to_string(k) + " n=" +
                    std::to_string(dataset.samples.size()));
  }
  struct Ranked {
    int score;
    const Sample* sample;
  };
  std::vector<Ranked> ranked;
  ranked.reserve(dataset.samples.size());
  for (const auto& s : dataset.samples) {
    ranked.push_back({matrix.score(s.id), &s});
  }
  // (score desc, id asc): deterministic split at tied boundaries.
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.sample->id < b.sample->id;
  });

  Dataset out;
  out.name = dataset.name + "_split";
  for (int i = 0; i < k; ++i) {
    Sample s = *ranked[i].sample;
    s.label = Label::positive;
    out.samples.push_back(std::move(s));
  }
  for (std::size_t i = ranked.size() - k; i < ranked.size(); ++i) {
    Sample s = *ranked[i].sample;
    s.label = Label::negative;
    out.samples.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> sample_subset(const Dataset& dataset, int n_pos, int n_neg,
                                  std::uint64_t seed) {
  std::vector<const Sample*> pos;
  std::vector<const Sample*> neg;
  for (const auto& s : dataset.samples) {
    if (s.label == Label::positive) pos.push_back(&s);
    if (s.label == Label::negative) neg.push_back(&s);
  }
  if (static_cast<int>(pos.size()) < n_pos) {
    throw Error(ErrorCode::subset_insufficient,
                "positive: needed " + std::to_string(n_pos) + ", available " +
                    std::to_string(pos.size()));
  }
  if (static_cast<int>(neg.size()) < n_neg) {
    throw Error(ErrorCode::subset_insufficient,
                "negative: needed " + std::to_string(n_neg) + ", available " +
                    std::to_string(neg.size()));
  }
  // mt19937_64 with a hand-rolled index draw keeps the permutation identical
  // across platforms (shuffle/distribution implementations vary).
  std::mt19937_64 rng(seed);
  auto draw = [&rng](std::vector<const Sample*>& pool, int n) {
    std::vector<Sample> out;
    for (int i = 0; i < n; ++i) {
      std::size_t j = rng() % pool.size();
      out.push_back(*pool[j]);
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(j));
    }
    return out;
  };
  std::vector<Sample> subset = draw(pos, n_pos);
  std::vector<Sample> negatives = draw(neg, n_neg);
  subset.insert(subset.end(), negatives.begin(), negatives.end());
  return subset;
}

}  // namespace dsai
