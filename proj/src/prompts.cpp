#include "dsai/prompts.hpp"

#include <cctype>

#include "dsai/error.hpp"

namespace dsai {

std::string render_template(
    const std::string& template_text,
    const std::map<std::string, std::string>& bindings) {
  std::string out;
  out.reserve(template_text.size());
  std::size_t i = 0;
  while (i < template_text.size()) {
    char c = template_text[i];
    if (c != '{') {
      out.push_back(c);
      ++i;
      continue;
    }
    // Placeholder = '{' name '}' with name in [A-Za-z0-9_]+. Anything else
    // is literal text.
    std::size_t j = i + 1;
    while (j < template_text.size() &&
           (std::isalnum(static_cast<unsigned char>(template_text[j])) ||
            template_text[j] == '_')) {
      ++j;
    }
    if (j > i + 1 && j < template_text.size() && template_text[j] == '}') {
      std::string name = template_text.substr(i + 1, j - i - 1);
      auto it = bindings.find(name);
      if (it == bindings.end()) {
        throw Error(ErrorCode::template_unbound,
                    "unbound placeholder: " + name);
      }
      out += it->second;  // emitted verbatim, no re-expansion
      i = j + 1;
    } else {
      out.push_back(c);
      ++i;
    }
  }
  return out;
}

namespace {

// Function-local so registries constructed during static initialization of
// other translation units still see the built-ins.
const std::map<std::string, std::string>& builtins() {
  static const std::map<std::string, std::string> kBuiltins = {
    {"stage1_generate",
     "TASK: perspective generation\n"
     "You are analyzing a collection of short texts. Propose {count} distinct "
     "perspectives that might explain differences among them.\n"
     "For each perspective output a block of four labeled lines:\n"
     "NAME: <short name>\n"
     "CRITERION: <what the perspective evaluates>\n"
     "PROCESS: <how to analyze a text from this perspective>\n"
     "EXAMPLE: <one illustrative text from the collection>\n"
     "\n"
     "Previously accepted perspectives (do not repeat them):\n"
     "{previous}\n"
     "\n"
     "Texts:\n"
     "{samples}\n"
     "{retry_note}"},
    {"stage1_dedup",
     "TASK: perspective deduplication\n"
     "Do these two perspectives cover the same aspect? Answer with a single "
     "token: yes or no.\n"
     "A:\n"
     "NAME: {a_name}\n"
     "CRITERION: {a_criterion}\n"
     "B:\n"
     "NAME: {b_name}\n"
     "CRITERION: {b_criterion}\n"
     "{retry_note}"},
    {"stage2_match",
     "TASK: value matching\n"
     "Assign a value describing the text under each perspective below. Answer "
     "one line per perspective, formatted \"<perspective id>: <value>\". "
     "Use N/A when a perspective does not apply to the text.\n"
     "TEXT: {text}\n"
     "PERSPECTIVES:\n"
     "{perspectives}\n"
     "{retry_note}"},
    {"stage3_labels",
     "TASK: cluster label generation\n"
     "Perspective: {name} ({criterion})\n"
     "Below are the distinct values observed under this perspective, with "
     "occurrence counts. Propose as few labels as faithfully cover the "
     "values, one label per line.\n"
     "VALUES:\n"
     "{values}\n"
     "{retry_note}"},
    {"stage3_assign",
     "TASK: cluster assignment\n"
     "Perspective: {name}\n"
     "Assign each value to exactly one of the labels. Answer one line per "
     "value, formatted \"<value> => <label>\".\n"
     "LABELS:\n"
     "{labels}\n"
     "VALUES:\n"
     "{values}\n"
     "{retry_note}"},
    {"stage4_verbalize",
     "TASK: verbalization\n"
     "Rewrite the (perspective, label) pair below as one imperative sentence "
     "describing the positive group.\n"
     "{direction_instruction}\n"
     "PERSPECTIVE: {name} ({criterion})\n"
     "LABEL: {label}\n"
     "DIRECTION: {direction}\n"
     "{retry_note}"},
    {"annotate",
     "TASK: criterion annotation\n"
     "Does the text satisfy the criterion? Answer with a single token: "
     "present or absent.\n"
     "CRITERION: {criterion}\n"
     "TEXT: {text}\n"
     "{retry_note}"},
    {"audit",
     "TASK: consistency audit\n"
     "Confirm or reject the recorded decision below. Answer with a single "
     "token: yes or no.\n"
     "{decision}\n"},
    {"recall_match",
     "TASK: criteria matching\n"
     "REFERENCE: {reference}\n"
     "For each candidate below, answer whether it expresses the same "
     "requirement as the reference, allowing paraphrase. Answer one line per "
     "candidate, formatted \"<number>: yes\" or \"<number>: no\".\n"
     "CANDIDATES:\n"
     "{candidates}\n"
     "{retry_note}"},
    {"classify_check",
     "TASK: criterion check\n"
     "CRITERION: {criterion}\n"
     "TEXT: {text}\n"
     "Does the text comply with the criterion? Answer with a single token: "
     "satisfied or unsatisfied.\n"},
    {"baseline_posdata",
     "TASK: feature listing\n"
     "The following are examples of high-quality texts. List the key "
     "characteristics common to these examples, one per line, each starting "
     "with \"- \".\n"
     "EXAMPLES:\n"
     "{positives}\n"
     "{retry_note}"},
    {"baseline_mixeddata",
     "TASK: feature listing\n"
     "Below are two groups of texts. Group HIGH contains high-quality texts "
     "and group LOW contains low-quality texts. List the key features that "
     "distinguish the high-quality group, one per line, each starting with "
     "\"- \".\n"
     "GROUP HIGH:\n"
     "{group_high}\n"
     "GROUP LOW:\n"
     "{group_low}\n"
     "{retry_note}"},
    {"baseline_nodata",
     "TASK: feature listing\n"
     "List the characteristics that define high-quality texts, one per line, "
     "each starting with \"- \".\n"
     "{retry_note}"},
    {"baseline_nocontext",
     "TASK: group comparison\n"
     "Below are two groups of texts. Describe the features that distinguish "
     "group A from group B, one per line, each starting with \"- \".\n"
     "GROUP A:\n"
     "{group_a}\n"
     "GROUP B:\n"
     "{group_b}\n"
     "{retry_note}"},
  };
  return kBuiltins;
}

}  // namespace

PromptRegistry::PromptRegistry() : templates_(builtins()) {}

bool PromptRegistry::has(const std::string& id) const {
  return templates_.contains(id);
}

void PromptRegistry::set(const std::string& id, std::string text) {
  templates_[id] = std::move(text);
}

const std::string& PromptRegistry::get(const std::string& id) const {
  auto it = templates_.find(id);
  if (it == templates_.end()) {
    throw Error(ErrorCode::template_unknown, "unknown template: " + id);
  }
  return it->second;
}

std::string PromptRegistry::render(
    const std::string& id,
    const std::map<std::string, std::string>& bindings) const {
  return render_template(get(id), bindings);
}

}  // namespace dsai
