#include "dsai/clustering.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "dsai/error.hpp"
#include "dsai/gateway.hpp"
#include "dsai/prompts.hpp"
#include "dsai/textutil.hpp"
#include "json.hpp"

namespace dsai {

using nlohmann::json;

std::vector<ValueCount> distinct_values(const AssignmentTable& table,
                                        const std::string& perspective_id) {
  std::vector<ValueCount> out;
  std::map<std::string, std::size_t> index;
  for (const auto& a : table.assignments) {
    if (a.perspective_id != perspective_id || a.is_na()) continue;
    auto it = index.find(a.value);
    if (it == index.end()) {
      index[a.value] = out.size();
      out.push_back({a.value, 1});
    } else {
      ++out[it->second].count;
    }
  }
  return out;
}

namespace {

std::string render_values(const std::vector<ValueCount>& values,
                          bool with_counts) {
  std::ostringstream out;
  for (const auto& v : values) {
    out << "- " << v.value;
    if (with_counts) out << " (" << v.count << ")";
    out << "\n";
  }
  return out.str();
}

std::string render_labels(const std::vector<std::string>& labels) {
  std::ostringstream out;
  for (const auto& l : labels) out << "- " << l << "\n";
  return out.str();
}

}  // namespace

std::vector<std::string> generate_cluster_labels(
    const Perspective& perspective, const std::vector<ValueCount>& values,
    Gateway& gateway, const PromptRegistry& prompts) {
  if (values.empty()) {
    throw Error(ErrorCode::precondition,
                "label generation needs at least one value");
  }
  auto ask = [&](const std::string& retry_note) {
    ChatRequest request;
    request.tag = "stage3_labels";
    request.messages = {{Role::user,
                         prompts.render("stage3_labels",
                                        {{"name", perspective.name},
                                         {"criterion", perspective.criterion},
                                         {"values", render_values(values, true)},
                                         {"retry_note", retry_note}})}};
    std::vector<std::string> labels;
    for (const auto& raw : split_lines(gateway.complete(request).text)) {
      std::string line = trim(raw);
      if (line.rfind("- ", 0) == 0) line = trim(line.substr(2));
      if (line.empty()) continue;
      std::string label = normalize(line);
      if (std::find(labels.begin(), labels.end(), label) == labels.end()) {
        labels.push_back(label);
      }
    }
    return labels;
  };

  std::vector<std::string> labels = ask("");
  if (labels.empty()) {
    labels = ask("Reminder: output one label per line.");
  }
  if (labels.empty()) {
    throw Error(ErrorCode::stage,
                "stage3a: no parsable labels for perspective " +
                    perspective.id);
  }
  if (labels.size() > values.size()) {
    labels.resize(values.size());
  }
  return labels;
}

ClusterScheme assign_values_to_clusters(const Perspective& perspective,
                                        const std::vector<ValueCount>& values,
                                        const std::vector<std::string>& labels,
                                        Gateway& gateway,
                                        const PromptRegistry& prompts) {
  ClusterScheme scheme;
  scheme.perspective_id = perspective.id;
  scheme.labels = labels;

  auto ask = [&](const std::vector<ValueCount>& pending,
                 const std::string& retry_note) {
    ChatRequest request;
    request.tag = "stage3_assign";
    request.messages = {{Role::user,
                         prompts.render("stage3_assign",
                                        {{"name", perspective.name},
                                         {"labels", render_labels(labels)},
                                         {"values", render_values(pending, false)},
                                         {"retry_note", retry_note}})}};
    std::map<std::string, std::string> parsed;
    for (const auto& raw : split_lines(gateway.complete(request).text)) {
      std::string line = trim(raw);
      auto arrow = line.find("=>");
      if (arrow == std::string::npos) continue;
      std::string value = normalize(line.substr(0, arrow));
      std::string label = normalize(line.substr(arrow + 2));
      if (!value.empty() && !label.empty()) parsed[value] = label;
    }
    return parsed;
  };

  auto listed = [&](const std::string& label) {
    return std::find(labels.begin(), labels.end(), label) != labels.end();
  };

  auto first = ask(values, "");
  std::vector<ValueCount> pending;
  for (const auto& v : values) {
    auto it = first.find(v.value);
    if (it != first.end() && listed(it->second)) {
      scheme.assignment[v.value] = it->second;
    } else {
      pending.push_back(v);
    }
  }
  if (!pending.empty()) {
    auto retry = ask(pending,
                     "Reminder: assign each value to one of the listed labels "
                     "exactly, one \"<value> => <label>\" line per value.");
    for (const auto& v : pending) {
      auto it = retry.find(v.value);
      if (it != retry.end() && listed(it->second)) {
        scheme.assignment[v.value] = it->second;
      } else {
        scheme.assignment[v.value] = kUnassignedLabel;
      }
    }
  }
  return scheme;
}

std::vector<FeatureCell> build_cells(const AssignmentTable& table,
                                     const std::vector<ClusterScheme>& schemes,
                                     const Dataset& dataset) {
  std::map<std::string, const ClusterScheme*> by_perspective;
  for (const auto& s : schemes) by_perspective[s.perspective_id] = &s;

  std::map<std::string, Label> labels_by_id;
  for (const auto& s : dataset.samples) labels_by_id[s.id] = s.label;

  // (perspective, label) -> members, in scheme order.
  std::vector<FeatureCell> cells;
  std::map<std::pair<std::string, std::string>, std::size_t> index;

  for (const auto& a : table.assignments) {
    if (a.is_na()) continue;
    auto scheme_it = by_perspective.find(a.perspective_id);
    if (scheme_it == by_perspective.end()) {
      throw Error(ErrorCode::precondition,
                  "no cluster scheme for perspective: " + a.perspective_id);
    }
    auto label_it = scheme_it->second->assignment.find(a.value);
    if (label_it == scheme_it->second->assignment.end()) {
      throw Error(ErrorCode::precondition,
                  "cluster scheme misses value \"" + a.value +
                      "\" of perspective " + a.perspective_id);
    }
    if (label_it->second == kUnassignedLabel) continue;

    auto sample_label = labels_by_id.find(a.sample_id);
    if (sample_label == labels_by_id.end() ||
        sample_label->second == Label::unlabeled) {
      throw Error(ErrorCode::cell_unlabeled,
                  "unlabeled sample in cells: " + a.sample_id);
    }

    auto key = std::make_pair(a.perspective_id, label_it->second);
    auto cell_it = index.find(key);
    if (cell_it == index.end()) {
      index[key] = cells.size();
      cells.push_back({a.perspective_id, label_it->second, {}, 0, 0});
      cell_it = index.find(key);
    }
    FeatureCell& cell = cells[cell_it->second];
    cell.member_ids.push_back(a.sample_id);
    if (sample_label->second == Label::positive) {
      ++cell.pos_count;
    } else {
      ++cell.neg_count;
    }
  }
  return cells;
}

void save_schemes(const std::vector<ClusterScheme>& schemes,
                  const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::precondition,
                "cannot write schemes: " + path.string());
  }
  for (const auto& s : schemes) {
    out << json{{"perspective_id", s.perspective_id},
                {"labels", s.labels},
                {"assignment", s.assignment}}
               .dump()
        << "\n";
  }
}

std::vector<ClusterScheme> load_schemes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::precondition,
                "cannot read schemes: " + path.string());
  }
  std::vector<ClusterScheme> schemes;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    json record = json::parse(line);
    ClusterScheme s;
    s.perspective_id = record.at("perspective_id").get<std::string>();
    s.labels = record.at("labels").get<std::vector<std::string>>();
    s.assignment =
        record.at("assignment").get<std::map<std::string, std::string>>();
    schemes.push_back(std::move(s));
  }
  return schemes;
}

void save_cells(const std::vector<FeatureCell>& cells,
                const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::precondition,
                "cannot write cells: " + path.string());
  }
  for (const auto& c : cells) {
    out << json{{"perspective_id", c.perspective_id},
                {"label", c.label},
                {"member_ids", c.member_ids},
                {"pos_count", c.pos_count},
                {"neg_count", c.neg_count}}
               .dump()
        << "\n";
  }
}

std::vector<FeatureCell> load_cells(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::precondition,
                "cannot read cells: " + path.string());
  }
  std::vector<FeatureCell> cells;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    json record = json::parse(line);
    FeatureCell c;
    c.perspective_id = record.at("perspective_id").get<std::string>();
    c.label = record.at("label").get<std::string>();
    c.member_ids = record.at("member_ids").get<std::vector<std::string>>();
    c.pos_count = record.at("pos_count").get<int>();
    c.neg_count = record.at("neg_count").get<int>();
    cells.push_back(std::move(c));
  }
  return cells;
}

}  // namespace dsai
