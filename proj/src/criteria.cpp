#include "dsai/criteria.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "dsai/error.hpp"
#include "dsai/gateway.hpp"
#include "dsai/prompts.hpp"
#include "dsai/textutil.hpp"
#include "json.hpp"

namespace dsai {

using nlohmann::json;

double directional_score(const FeatureCell& cell) {
  int n = cell.frequency();
  if (n <= 0) {
    throw Error(ErrorCode::precondition, "directional score of an empty cell");
  }
  // Exact integer numerator, one rounding at the division.
  return static_cast<double>(2 * cell.pos_count - n) / n;
}

namespace {

bool is_single_sentence(const std::string& text) {
  std::string t = trim(text);
  if (t.empty() || t.find('\n') != std::string::npos) return false;
  // A terminator followed by more content means multiple sentences.
  for (std::size_t i = 0; i + 1 < t.size(); ++i) {
    if ((t[i] == '.' || t[i] == '!' || t[i] == '?') && t[i + 1] == ' ') {
      return false;
    }
  }
  return true;
}

}  // namespace

Criterion verbalize(const FeatureCell& cell, const Perspective& perspective,
                    Gateway& gateway, const PromptRegistry& prompts) {
  double score = directional_score(cell);
  if (score == 0.0) {
    throw Error(ErrorCode::precondition,
                "verbalize requires a nonzero directional score");
  }
  bool negative = score < 0;

  auto ask = [&](const std::string& retry_note) {
    ChatRequest request;
    request.tag = "stage4";
    request.messages = {{Role::user,
                         prompts.render(
                             "stage4_verbalize",
                             {{"direction_instruction",
                               negative
                                   ? "The pair characterizes the negative "
                                     "group: phrase it as an avoid-statement "
                                     "beginning with \"Avoid\"."
                                   : "Phrase it as a direct statement of the "
                                     "desired trait."},
                              {"name", perspective.name},
                              {"criterion", perspective.criterion},
                              {"label", cell.label},
                              {"direction", negative ? "negative" : "positive"},
                              {"retry_note", retry_note}})}};
    return trim(gateway.complete(request).text);
  };

  std::string sentence = ask("");
  if (!is_single_sentence(sentence)) {
    sentence = ask("Reminder: answer with exactly one sentence.");
  }
  if (!is_single_sentence(sentence)) {
    throw Error(ErrorCode::stage, "stage4: unusable verbalization for (" +
                                      cell.perspective_id + ", " + cell.label +
                                      ")");
  }

  Criterion criterion;
  criterion.text = sentence;
  criterion.perspective_id = cell.perspective_id;
  criterion.label = cell.label;
  criterion.direction_score = score;
  criterion.prominence = std::abs(score);
  criterion.frequency = cell.frequency();
  criterion.phrasing = negative ? Phrasing::avoid : Phrasing::direct;
  criterion.member_ids = cell.member_ids;
  return criterion;
}

std::vector<Criterion> select(const std::vector<Criterion>& criteria,
                              const SelectionConfig& config) {
  std::vector<Criterion> out;
  for (const auto& c : criteria) {
    if (c.prominence < config.min_prominence) continue;
    if (config.require_positive_prominence && !(c.prominence > 0)) continue;
    if (c.frequency < config.min_frequency) continue;
    out.push_back(c);
  }
  std::sort(out.begin(), out.end(), [](const Criterion& a, const Criterion& b) {
    if (a.prominence != b.prominence) return a.prominence > b.prominence;
    if (a.frequency != b.frequency) return a.frequency > b.frequency;
    return a.text < b.text;
  });
  return out;
}

std::vector<TraceRow> trace(const Criterion& criterion,
                            const Dataset& dataset) {
  std::set<std::string> members(criterion.member_ids.begin(),
                                criterion.member_ids.end());
  std::vector<TraceRow> rows;
  for (const auto& s : dataset.samples) {
    if (members.erase(s.id) > 0) {
      rows.push_back({s.id, s.text, s.label});
    }
  }
  if (!members.empty()) {
    throw Error(ErrorCode::trace_dangling,
                "member id not in dataset: " + *members.begin());
  }
  return rows;
}

std::string format_prominence(double prominence) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", prominence);
  return buf;
}

Report report(const std::vector<Criterion>& criteria, int k) {
  std::vector<const Criterion*> sorted;
  for (const auto& c : criteria) sorted.push_back(&c);
  std::sort(sorted.begin(), sorted.end(),
            [](const Criterion* a, const Criterion* b) {
              if (a->prominence != b->prominence) {
                return a->prominence > b->prominence;
              }
              if (a->frequency != b->frequency) {
                return a->frequency > b->frequency;
              }
              return a->text < b->text;
            });

  Report rep;
  std::size_t n = sorted.size();
  std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 0)), n);
  for (std::size_t i = 0; i < take; ++i) {
    rep.top.push_back({sorted[i]->text, sorted[i]->prominence,
                       sorted[i]->frequency});
  }
  for (std::size_t i = n - take; i < n; ++i) {
    rep.bottom.push_back({sorted[i]->text, sorted[i]->prominence,
                          sorted[i]->frequency});
  }

  for (const auto& c : criteria) {
    int bin = std::min(9, static_cast<int>(c.prominence * 10.0));
    ++rep.prominence_histogram[static_cast<std::size_t>(bin)];
  }

  const std::array<std::pair<int, int>, 4> bounds = {
      {{1, 10}, {11, 100}, {101, 1000}, {1001, 0}}};
  for (auto [lo, hi] : bounds) {
    FrequencyBucket bucket{lo, hi, 0, 0.0};
    double sum = 0.0;
    for (const auto& c : criteria) {
      if (c.frequency < lo || (hi > 0 && c.frequency > hi)) continue;
      ++bucket.count;
      sum += c.prominence;
    }
    if (bucket.count > 0) bucket.mean_prominence = sum / bucket.count;
    rep.frequency_buckets.push_back(bucket);
  }
  return rep;
}

std::string Report::to_text() const {
  std::ostringstream out;
  out << "Top criteria by prominence\n";
  for (const auto& row : top) {
    out << "  " << format_prominence(row.prominence) << "  " << row.frequency
        << "  " << row.text << "\n";
  }
  out << "Bottom criteria by prominence\n";
  for (const auto& row : bottom) {
    out << "  " << format_prominence(row.prominence) << "  " << row.frequency
        << "  " << row.text << "\n";
  }
  out << "Prominence histogram (bins of 0.1)\n  ";
  for (int count : prominence_histogram) out << count << " ";
  out << "\nMean prominence by frequency bucket\n";
  for (const auto& bucket : frequency_buckets) {
    out << "  [" << bucket.lo << ", ";
    if (bucket.hi > 0) {
      out << bucket.hi;
    } else {
      out << "inf";
    }
    out << "]: n=" << bucket.count << " mean="
        << format_prominence(bucket.mean_prominence) << "\n";
  }
  return out.str();
}

std::string Report::to_json() const {
  json out;
  auto rows_to_json = [](const std::vector<ReportRow>& rows) {
    json arr = json::array();
    for (const auto& row : rows) {
      arr.push_back({{"text", row.text},
                     {"prominence", row.prominence},
                     {"prominence_4dp", format_prominence(row.prominence)},
                     {"frequency", row.frequency}});
    }
    return arr;
  };
  out["top"] = rows_to_json(top);
  out["bottom"] = rows_to_json(bottom);
  out["prominence_histogram"] = prominence_histogram;
  json buckets = json::array();
  for (const auto& bucket : frequency_buckets) {
    buckets.push_back({{"lo", bucket.lo},
                       {"hi", bucket.hi},
                       {"count", bucket.count},
                       {"mean_prominence", bucket.mean_prominence}});
  }
  out["frequency_buckets"] = buckets;
  return out.dump(2);
}

void save_criteria(const std::vector<Criterion>& criteria,
                   const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::precondition,
                "cannot write criteria: " + path.string());
  }
  for (const auto& c : criteria) {
    out << json{{"text", c.text},
                {"perspective_id", c.perspective_id},
                {"label", c.label},
                {"direction_score", c.direction_score},
                {"prominence", c.prominence},
                {"frequency", c.frequency},
                {"phrasing", c.phrasing == Phrasing::avoid ? "avoid" : "direct"},
                {"member_ids", c.member_ids}}
               .dump()
        << "\n";
  }
}

std::vector<Criterion> load_criteria(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::precondition,
                "cannot read criteria: " + path.string());
  }
  std::vector<Criterion> criteria;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    json record = json::parse(line);
    Criterion c;
    c.text = record.at("text").get<std::string>();
    c.perspective_id = record.at("perspective_id").get<std::string>();
    c.label = record.at("label").get<std::string>();
    c.direction_score = record.at("direction_score").get<double>();
    c.prominence = record.at("prominence").get<double>();
    c.frequency = record.at("frequency").get<int>();
    c.phrasing = record.at("phrasing").get<std::string>() == "avoid"
                     ? Phrasing::avoid
                     : Phrasing::direct;
    c.member_ids = record.at("member_ids").get<std::vector<std::string>>();
    criteria.push_back(std::move(c));
  }
  return criteria;
}

}  // namespace dsai
