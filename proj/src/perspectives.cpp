#include "dsai/perspectives.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "dsai/error.hpp"
#include "dsai/gateway.hpp"
#include "dsai/prompts.hpp"
#include "dsai/textutil.hpp"
#include "json.hpp"

namespace dsai {

using nlohmann::json;

std::vector<Perspective> parse_perspective_blocks(const std::string& text,
                                                  int origin_step) {
  std::vector<Perspective> out;
  Perspective current;
  bool open = false;
  auto flush = [&] {
    if (open && !current.name.empty() && !current.criterion.empty() &&
        !current.process.empty() && !current.example.empty()) {
      current.origin_step = origin_step;
      out.push_back(current);
    }
    current = {};
    open = false;
  };
  for (const auto& raw : split_lines(text)) {
    std::string line = trim(raw);
    if (starts_with_i(line, "NAME:")) {
      flush();
      open = true;
      current.name = trim(line.substr(5));
    } else if (starts_with_i(line, "CRITERION:")) {
      current.criterion = trim(line.substr(10));
    } else if (starts_with_i(line, "PROCESS:")) {
      current.process = trim(line.substr(8));
    } else if (starts_with_i(line, "EXAMPLE:")) {
      current.example = trim(line.substr(8));
    }
  }
  flush();
  return out;
}

namespace {

// Unique slug ids: collisions get _2, _3 suffixes.
void assign_ids(std::vector<Perspective>& perspectives) {
  std::map<std::string, int> used;
  for (auto& p : perspectives) {
    std::string base = slugify(p.name);
    if (base.empty()) base = "perspective";
    int n = ++used[base];
    p.id = n == 1 ? base : base + "_" + std::to_string(n);
  }
}

std::string render_subset(std::span<const Sample> subset) {
  // Sorted by id: deterministic and class-blind.
  std::vector<const Sample*> ordered;
  for (const auto& s : subset) ordered.push_back(&s);
  std::sort(ordered.begin(), ordered.end(),
            [](const Sample* a, const Sample* b) { return a->id < b->id; });
  std::ostringstream out;
  for (const auto* s : ordered) out << "- " << s->text << "\n";
  return out.str();
}

std::string render_previous(const std::vector<Perspective>& previous) {
  if (previous.empty()) return "(none)";
  std::ostringstream out;
  for (const auto& p : previous) {
    out << "- " << p.name << ": " << p.criterion << "\n";
  }
  return out.str();
}

}  // namespace

std::string build_generation_prompt(const PromptRegistry& prompts,
                                    std::span<const Sample> subset,
                                    const std::vector<Perspective>& previous,
                                    int per_step,
                                    const std::string& retry_note) {
  return prompts.render("stage1_generate",
                        {{"count", std::to_string(per_step)},
                         {"samples", render_subset(subset)},
                         {"previous", render_previous(previous)},
                         {"retry_note", retry_note}});
}

void check_context_hidden(const std::string& prompt,
                          const GenerationConfig& config) {
  auto fail = [&](const std::string& word) {
    throw Error(ErrorCode::stage,
                "stage1 prompt leaks task context: \"" + word + "\"");
  };
  if (!config.dataset_name.empty() && icontains(prompt, config.dataset_name)) {
    fail(config.dataset_name);
  }
  for (const auto& word : config.blocklist) {
    if (!word.empty() && icontains(prompt, word)) fail(word);
  }
  if (icontains(prompt, "high-quality")) fail("high-quality");
  if (icontains(prompt, "low-quality")) fail("low-quality");
}

PerspectiveSet generate_perspectives(std::span<const Sample> subset,
                                     const GenerationConfig& config,
                                     Gateway& gateway,
                                     const PromptRegistry& prompts) {
  if (config.per_step < 1 || config.steps < 1) {
    throw Error(ErrorCode::precondition, "per_step and steps must be >= 1");
  }
  bool has_pos = std::any_of(subset.begin(), subset.end(), [](const Sample& s) {
    return s.label == Label::positive;
  });
  bool has_neg = std::any_of(subset.begin(), subset.end(), [](const Sample& s) {
    return s.label == Label::negative;
  });
  if (!has_pos || !has_neg) {
    throw Error(ErrorCode::precondition,
                "stage1 subset must contain both classes");
  }

  PerspectiveSet set;
  set.config = config;
  for (int step = 1; step <= config.steps; ++step) {
    auto run_step = [&](const std::string& retry_note) {
      std::string prompt = build_generation_prompt(
          prompts, subset, set.perspectives, config.per_step, retry_note);
      check_context_hidden(prompt, config);
      ChatRequest request;
      request.tag = "stage1";
      request.temperature = config.temperature;
      request.messages = {{Role::user, prompt}};
      return parse_perspective_blocks(gateway.complete(request).text, step);
    };
    std::vector<Perspective> parsed = run_step("");
    if (parsed.empty()) {
      parsed = run_step(
          "Reminder: output NAME/CRITERION/PROCESS/EXAMPLE blocks exactly as "
          "specified.");
    }
    if (parsed.empty()) {
      throw Error(ErrorCode::stage,
                  "stage1: no parsable perspectives at step " +
                      std::to_string(step));
    }
    if (static_cast<int>(parsed.size()) > config.per_step) {
      parsed.resize(static_cast<std::size_t>(config.per_step));
    }
    set.perspectives.insert(set.perspectives.end(), parsed.begin(),
                            parsed.end());
  }
  assign_ids(set.perspectives);
  return set;
}

PerspectiveSet dedup_perspectives(const PerspectiveSet& set, Gateway& gateway,
                                  const PromptRegistry& prompts) {
  PerspectiveSet out;
  out.config = set.config;

  // Pass 1: exact duplicates by normalized name, first occurrence wins.
  // Input order is already (origin_step, original index).
  std::vector<Perspective> candidates;
  {
    std::map<std::string, bool> seen;
    for (const auto& p : set.perspectives) {
      std::string key = normalize(p.name);
      if (seen[key]) continue;
      seen[key] = true;
      candidates.push_back(p);
    }
  }

  // Pass 2: pairwise-greedy backend verdicts against the kept set.
  auto same_aspect = [&](const Perspective& kept, const Perspective& cand) {
    auto ask = [&](const std::string& retry_note) {
      ChatRequest request;
      request.tag = "stage1_dedup";
      request.messages = {{Role::user,
                           prompts.render("stage1_dedup",
                                          {{"a_name", kept.name},
                                           {"a_criterion", kept.criterion},
                                           {"b_name", cand.name},
                                           {"b_criterion", cand.criterion},
                                           {"retry_note", retry_note}})}};
      return normalize(gateway.complete(request).text);
    };
    std::string verdict = ask("");
    if (verdict != "yes" && verdict != "no") {
      verdict = ask("Reminder: answer with exactly one token, yes or no.");
    }
    if (verdict != "yes" && verdict != "no") {
      // Unparsable twice: keep the candidate rather than over-prune.
      return false;
    }
    return verdict == "yes";
  };

  for (const auto& cand : candidates) {
    bool duplicate = false;
    for (const auto& kept : out.perspectives) {
      if (same_aspect(kept, cand)) {
        duplicate = true;
        break;
      }
    }
    if (!duplicate) out.perspectives.push_back(cand);
  }
  assign_ids(out.perspectives);
  return out;
}

void save_perspectives(const PerspectiveSet& set,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::precondition,
                "cannot write perspectives: " + path.string());
  }
  for (const auto& p : set.perspectives) {
    out << json{{"id", p.id},
                {"name", p.name},
                {"criterion", p.criterion},
                {"process", p.process},
                {"example", p.example},
                {"origin_step", p.origin_step}}
               .dump()
        << "\n";
  }
}

PerspectiveSet load_perspectives(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::precondition,
                "cannot read perspectives: " + path.string());
  }
  PerspectiveSet set;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    json record = json::parse(line);
    Perspective p;
    p.id = record.at("id").get<std::string>();
    p.name = record.at("name").get<std::string>();
    p.criterion = record.at("criterion").get<std::string>();
    p.process = record.at("process").get<std::string>();
    p.example = record.at("example").get<std::string>();
    p.origin_step = record.at("origin_step").get<int>();
    set.perspectives.push_back(std::move(p));
  }
  return set;
}

}  // namespace dsai
