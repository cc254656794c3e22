#include <fstream>
#include <sstream>

#include "dsai/error.hpp"
#include "dsai/gateway.hpp"
#include "dsai/textutil.hpp"
#include "json.hpp"

namespace dsai {

using nlohmann::json;

namespace {

const std::string& last_user_content(const ChatRequest& request) {
  for (auto it = request.messages.rbegin(); it != request.messages.rend();
       ++it) {
    if (it->role == Role::user) return it->content;
  }
  throw Error(ErrorCode::precondition, "mock: request has no user message");
}

// Value of a "KEY: ..." line, or empty if absent.
std::string line_value(const std::string& prompt, const std::string& key) {
  for (const auto& line : split_lines(prompt)) {
    if (line.rfind(key, 0) == 0) return trim(line.substr(key.size()));
  }
  return {};
}

// Items of a block introduced by `header`, one "- item" per line.
std::vector<std::string> block_items(const std::string& prompt,
                                     const std::string& header) {
  std::vector<std::string> items;
  bool in_block = false;
  for (const auto& line : split_lines(prompt)) {
    if (trim(line) == header) {
      in_block = true;
      continue;
    }
    if (!in_block) continue;
    std::string t = trim(line);
    if (t.rfind("- ", 0) == 0) {
      items.push_back(trim(t.substr(2)));
    } else if (!t.empty()) {
      break;
    }
  }
  return items;
}

// "value (12)" -> "value"
std::string strip_count_suffix(const std::string& item) {
  auto pos = item.rfind(" (");
  if (pos != std::string::npos && item.back() == ')') {
    return item.substr(0, pos);
  }
  return item;
}

std::string marker_perspectives_response(const std::vector<std::string>& markers) {
  std::ostringstream out;
  for (const auto& tok : markers) {
    out << "NAME: marker " << tok << "\n"
        << "CRITERION: whether the text contains the token " << tok << "\n"
        << "PROCESS: scan the text for the token " << tok << "\n"
        << "EXAMPLE: a text containing " << tok << "\n\n";
  }
  return out.str();
}

std::string marker_values_response(const ChatRequest& request,
                                   const std::vector<std::string>& markers) {
  const std::string& prompt = last_user_content(request);
  std::string text = line_value(prompt, "TEXT:");
  std::ostringstream out;
  for (const auto& item : block_items(prompt, "PERSPECTIVES:")) {
    auto colon = item.find(':');
    std::string id = trim(item.substr(0, colon));
    std::string value = "N/A";
    for (const auto& tok : markers) {
      if (icontains(id, tok)) {
        value = icontains(text, tok) ? "contains " + tok : "lacks " + tok;
        break;
      }
    }
    out << id << ": " << value << "\n";
  }
  return out.str();
}

std::string labels_echo_response(const ChatRequest& request) {
  const std::string& prompt = last_user_content(request);
  std::ostringstream out;
  for (const auto& item : block_items(prompt, "VALUES:")) {
    out << strip_count_suffix(item) << "\n";
  }
  return out.str();
}

std::string assign_identity_response(const ChatRequest& request) {
  const std::string& prompt = last_user_content(request);
  std::ostringstream out;
  for (const auto& item : block_items(prompt, "VALUES:")) {
    std::string value = strip_count_suffix(item);
    out << value << " => " << value << "\n";
  }
  return out.str();
}

std::string verbalize_label_response(const ChatRequest& request) {
  const std::string& prompt = last_user_content(request);
  std::string label = line_value(prompt, "LABEL:");
  std::string direction = line_value(prompt, "DIRECTION:");
  if (direction == "negative") {
    return "Avoid texts that match: " + label + ".";
  }
  return "Ensure the text matches: " + label + ".";
}

// Per-candidate verdicts: yes iff the candidate contains the first token of
// the reference item.
std::string recall_token_response(const ChatRequest& request) {
  const std::string& prompt = last_user_content(request);
  std::string reference = line_value(prompt, "REFERENCE:");
  std::string token = reference.substr(0, reference.find(' '));
  while (!token.empty() && (token.back() == ':' || token.back() == ',')) {
    token.pop_back();
  }
  std::ostringstream out;
  int index = 0;
  bool in_block = false;
  for (const auto& line : split_lines(prompt)) {
    if (trim(line) == "CANDIDATES:") {
      in_block = true;
      continue;
    }
    if (!in_block) continue;
    std::string t = trim(line);
    auto dot = t.find(". ");
    if (t.empty() || dot == std::string::npos) continue;
    ++index;
    std::string candidate = t.substr(dot + 2);
    out << index << ": " << (icontains(candidate, token) ? "yes" : "no")
        << "\n";
  }
  return out.str();
}

std::string classify_tokens_response(const ChatRequest& request,
                                     const std::vector<std::string>& tokens) {
  const std::string& prompt = last_user_content(request);
  std::string criterion = line_value(prompt, "CRITERION:");
  std::string text = line_value(prompt, "TEXT:");
  for (const auto& tok : tokens) {
    if (!icontains(criterion, tok)) continue;
    bool present = icontains(text, tok);
    bool avoid = starts_with_i(criterion, "avoid");
    return (avoid ? !present : present) ? "satisfied" : "unsatisfied";
  }
  return "unsatisfied";
}

std::string present_if_token_response(const ChatRequest& request,
                                      const std::string& token) {
  const std::string& prompt = last_user_content(request);
  std::string text = line_value(prompt, "TEXT:");
  return icontains(text, token) ? "present" : "absent";
}

}  // namespace

void MockBackend::add_rule(std::string contains, Handler handler) {
  rules_.push_back({std::move(contains), std::move(handler)});
}

void MockBackend::add_const_rule(std::string contains, std::string text) {
  add_rule(std::move(contains),
           [text = std::move(text)](const ChatRequest&) { return text; });
}

BackendResult MockBackend::complete(const ChatRequest& request) {
  std::string response_text;
  {
    std::lock_guard lock(mutex_);
    calls_.push_back(request);
  }
  const std::string& prompt = last_user_content(request);
  const Rule* matched = nullptr;
  for (const auto& rule : rules_) {
    if (prompt.find(rule.contains) != std::string::npos) {
      matched = &rule;
      break;
    }
  }
  if (!matched) {
    throw Error(ErrorCode::gateway_no_rule,
                "mock: no rule matches prompt starting with \"" +
                    prompt.substr(0, 60) + "\"");
  }
  response_text = matched->handler(request);
  BackendResult result;
  result.text = response_text;
  result.input_tokens = static_cast<std::int64_t>((prompt.size() + 3) / 4);
  result.output_tokens =
      static_cast<std::int64_t>((response_text.size() + 3) / 4);
  return result;
}

std::unique_ptr<MockBackend> MockBackend::from_script(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::precondition,
                "cannot read mock script: " + path.string());
  }
  json script = json::parse(in);
  auto backend =
      std::make_unique<MockBackend>("mock:" + path.filename().string());
  for (const auto& rule : script.at("rules")) {
    std::string contains = rule.at("contains").get<std::string>();
    std::string action = rule.at("action").get<std::string>();
    if (action == "const") {
      backend->add_const_rule(contains, rule.at("text").get<std::string>());
    } else if (action == "echo") {
      backend->add_rule(contains, [](const ChatRequest& r) {
        return last_user_content(r);
      });
    } else if (action == "marker_perspectives") {
      auto markers = rule.at("markers").get<std::vector<std::string>>();
      backend->add_const_rule(contains, marker_perspectives_response(markers));
    } else if (action == "marker_values") {
      auto markers = rule.at("markers").get<std::vector<std::string>>();
      backend->add_rule(contains, [markers](const ChatRequest& r) {
        return marker_values_response(r, markers);
      });
    } else if (action == "labels_echo") {
      backend->add_rule(contains, labels_echo_response);
    } else if (action == "assign_identity") {
      backend->add_rule(contains, assign_identity_response);
    } else if (action == "verbalize_label") {
      backend->add_rule(contains, verbalize_label_response);
    } else if (action == "recall_token") {
      backend->add_rule(contains, recall_token_response);
    } else if (action == "classify_tokens") {
      auto tokens = rule.at("tokens").get<std::vector<std::string>>();
      backend->add_rule(contains, [tokens](const ChatRequest& r) {
        return classify_tokens_response(r, tokens);
      });
    } else if (action == "present_if_token") {
      std::string token = rule.at("token").get<std::string>();
      backend->add_rule(contains, [token](const ChatRequest& r) {
        return present_if_token_response(r, token);
      });
    } else {
      throw Error(ErrorCode::ingest_parse, "mock: unknown action: " + action);
    }
  }
  return backend;
}

}  // namespace dsai
