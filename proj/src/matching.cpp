#include "dsai/matching.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "dsai/error.hpp"
#include "dsai/gateway.hpp"
#include "dsai/prompts.hpp"
#include "dsai/textutil.hpp"
#include "json.hpp"

namespace dsai {

using nlohmann::json;

namespace {

std::string render_batch(const std::vector<const Perspective*>& batch) {
  std::ostringstream out;
  for (const auto* p : batch) {
    out << "- " << p->id << ": " << p->criterion << "\n";
  }
  return out.str();
}

// "id: value" lines, order-insensitive. Unknown ids ignored.
std::map<std::string, std::string> parse_value_lines(
    const std::string& text, const std::vector<const Perspective*>& batch) {
  std::map<std::string, std::string> values;
  for (const auto& raw : split_lines(text)) {
    std::string line = trim(raw);
    auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    std::string id = trim(line.substr(0, colon));
    std::string value = trim(line.substr(colon + 1));
    if (value.empty()) continue;
    for (const auto* p : batch) {
      if (p->id == id) {
        if (normalize(value) == "n/a") {
          values[id] = kNotApplicable;
        } else {
          values[id] = normalize(value);
        }
        break;
      }
    }
  }
  return values;
}

}  // namespace

AssignmentTable match_values(const Dataset& dataset,
                             const PerspectiveSet& perspectives,
                             Gateway& gateway, const PromptRegistry& prompts,
                             int batch) {
  if (batch < 1) {
    throw Error(ErrorCode::precondition, "batch must be >= 1");
  }
  if (dataset.samples.empty() || perspectives.perspectives.empty()) {
    throw Error(ErrorCode::precondition,
                "matching needs a dataset and perspectives");
  }

  AssignmentTable table;
  table.n_samples = dataset.samples.size();
  table.n_perspectives = perspectives.perspectives.size();

  for (const auto& sample : dataset.samples) {
    for (std::size_t start = 0; start < perspectives.perspectives.size();
         start += static_cast<std::size_t>(batch)) {
      std::vector<const Perspective*> chunk;
      for (std::size_t i = start;
           i < perspectives.perspectives.size() &&
           i < start + static_cast<std::size_t>(batch);
           ++i) {
        chunk.push_back(&perspectives.perspectives[i]);
      }

      auto ask = [&](const std::vector<const Perspective*>& group,
                     const std::string& retry_note) {
        ChatRequest request;
        request.tag = "stage2";
        request.messages = {{Role::user,
                             prompts.render("stage2_match",
                                            {{"text", sample.text},
                                             {"perspectives", render_batch(group)},
                                             {"retry_note", retry_note}})}};
        return parse_value_lines(gateway.complete(request).text, group);
      };

      auto values = ask(chunk, "");
      std::vector<const Perspective*> missing;
      for (const auto* p : chunk) {
        if (!values.contains(p->id)) missing.push_back(p);
      }
      if (!missing.empty()) {
        auto retry = ask(missing,
                         "Reminder: answer exactly one \"<perspective id>: "
                         "<value>\" line per perspective.");
        values.insert(retry.begin(), retry.end());
      }
      for (const auto* p : chunk) {
        auto it = values.find(p->id);
        if (it == values.end()) {
          throw Error(ErrorCode::stage, "stage2: no value for sample " +
                                            sample.id + " perspective " +
                                            p->id);
        }
        table.assignments.push_back({sample.id, p->id, it->second});
      }
    }
  }
  return table;
}

std::vector<std::pair<std::string, std::string>> values_for(
    const AssignmentTable& table, const std::string& perspective_id) {
  bool known = false;
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& a : table.assignments) {
    if (a.perspective_id != perspective_id) continue;
    known = true;
    if (!a.is_na()) out.emplace_back(a.sample_id, a.value);
  }
  if (!known) {
    throw Error(ErrorCode::lookup, "unknown perspective: " + perspective_id);
  }
  return out;
}

void save_assignments(const AssignmentTable& table,
                      const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::precondition,
                "cannot write assignments: " + path.string());
  }
  for (const auto& a : table.assignments) {
    out << json{{"sample_id", a.sample_id},
                {"perspective_id", a.perspective_id},
                {"value", a.value}}
               .dump()
        << "\n";
  }
}

AssignmentTable load_assignments(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::precondition,
                "cannot read assignments: " + path.string());
  }
  AssignmentTable table;
  std::set<std::string> samples;
  std::set<std::string> perspectives;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    json record = json::parse(line);
    ValueAssignment a;
    a.sample_id = record.at("sample_id").get<std::string>();
    a.perspective_id = record.at("perspective_id").get<std::string>();
    a.value = record.at("value").get<std::string>();
    samples.insert(a.sample_id);
    perspectives.insert(a.perspective_id);
    table.assignments.push_back(std::move(a));
  }
  table.n_samples = samples.size();
  table.n_perspectives = perspectives.size();
  return table;
}

}  // namespace dsai
