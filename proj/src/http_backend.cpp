#include <cstdlib>

#include "dsai/error.hpp"
#include "dsai/gateway.hpp"
#include "httplib.h"
#include "json.hpp"

namespace dsai {

using nlohmann::json;

HttpBackend::HttpBackend(std::string base_url, std::string api_key)
    : base_url_(std::move(base_url)), api_key_(std::move(api_key)) {
  if (base_url_.empty()) {
    const char* env = std::getenv("DSAI_API_BASE");
    if (!env) {
      throw Error(ErrorCode::precondition,
                  "http backend: DSAI_API_BASE not set");
    }
    base_url_ = env;
  }
  if (api_key_.empty()) {
    if (const char* env = std::getenv("DSAI_API_KEY")) api_key_ = env;
  }
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

std::string HttpBackend::id() const { return "http:" + base_url_; }

BackendResult HttpBackend::complete(const ChatRequest& request) {
  json body;
  body["model"] = request.model;
  body["temperature"] = request.temperature;
  body["max_tokens"] = request.max_output_tokens;
  json messages = json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"role", role_name(m.role)}, {"content", m.content}});
  }
  body["messages"] = messages;

  httplib::Client client(base_url_);
  client.set_connection_timeout(30);
  client.set_read_timeout(120);
  httplib::Headers headers;
  if (!api_key_.empty()) {
    headers.emplace("Authorization", "Bearer " + api_key_);
  }

  auto result = client.Post("/chat/completions", headers, body.dump(),
                            "application/json");
  if (!result) {
    throw TransientBackendError("transport: " + httplib::to_string(result.error()));
  }
  if (result->status == 429 || result->status >= 500) {
    throw TransientBackendError("status " + std::to_string(result->status));
  }
  if (result->status != 200) {
    throw Error(ErrorCode::gateway_status,
                "backend rejected request: status " +
                    std::to_string(result->status) + " body: " +
                    result->body.substr(0, 200));
  }

  json parsed;
  try {
    parsed = json::parse(result->body);
    BackendResult out;
    out.text = parsed.at("choices").at(0).at("message").at("content")
                   .get<std::string>();
    const auto& usage = parsed.at("usage");
    out.input_tokens = usage.at("prompt_tokens").get<std::int64_t>();
    out.output_tokens = usage.at("completion_tokens").get<std::int64_t>();
    return out;
  } catch (const json::exception& err) {
    throw Error(ErrorCode::gateway_status,
                std::string("malformed backend response: ") + err.what());
  }
}

}  // namespace dsai
