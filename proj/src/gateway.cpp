#include "dsai/gateway.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "dsai/digest.hpp"
#include "dsai/error.hpp"
#include "json.hpp"

namespace dsai {

using nlohmann::json;

std::string role_name(Role role) {
  switch (role) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "user";
}

namespace {

void validate(const ChatRequest& request) {
  if (request.messages.empty()) {
    throw Error(ErrorCode::precondition, "chat request has no messages");
  }
  if (request.messages.front().role == Role::assistant) {
    throw Error(ErrorCode::precondition,
                "first message role must be system or user");
  }
  if (request.temperature < 0) {
    throw Error(ErrorCode::precondition, "temperature must be >= 0");
  }
  if (request.max_output_tokens <= 0) {
    throw Error(ErrorCode::precondition, "max_output_tokens must be positive");
  }
}

std::string format_temperature(double t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", t);
  return buf;
}

}  // namespace

std::string cache_key(const std::string& backend_id,
                      const ChatRequest& request) {
  json canonical;
  canonical["backend"] = backend_id;
  canonical["model"] = request.model;
  canonical["temperature"] = format_temperature(request.temperature);
  canonical["max_output_tokens"] = request.max_output_tokens;
  json messages = json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"role", role_name(m.role)}, {"content", m.content}});
  }
  canonical["messages"] = messages;
  return sha256_hex(canonical.dump());
}

// ---------------------------------------------------------------------------
// UsageLedger

void UsageLedger::record_call(const std::string& tag, const std::string& model,
                              std::int64_t input_tokens,
                              std::int64_t output_tokens) {
  std::lock_guard lock(mutex_);
  auto& e = entries_[{tag, model}];
  e.calls += 1;
  e.input_tokens += input_tokens;
  e.output_tokens += output_tokens;
}

void UsageLedger::record_cache_hit(const std::string& tag,
                                   const std::string& model,
                                   std::int64_t input_tokens,
                                   std::int64_t output_tokens) {
  std::lock_guard lock(mutex_);
  auto& e = entries_[{tag, model}];
  e.cache_hits += 1;
  (void)input_tokens;
  (void)output_tokens;
}

std::int64_t UsageLedger::calls_for_tag(const std::string& tag) const {
  std::lock_guard lock(mutex_);
  std::int64_t n = 0;
  for (const auto& [key, e] : entries_) {
    if (key.first == tag) n += e.calls;
  }
  return n;
}

std::int64_t UsageLedger::cache_hits_for_tag(const std::string& tag) const {
  std::lock_guard lock(mutex_);
  std::int64_t n = 0;
  for (const auto& [key, e] : entries_) {
    if (key.first == tag) n += e.cache_hits;
  }
  return n;
}

std::int64_t UsageLedger::total_calls() const {
  std::lock_guard lock(mutex_);
  std::int64_t n = 0;
  for (const auto& [key, e] : entries_) n += e.calls;
  return n;
}

std::string UsageLedger::to_json() const {
  std::lock_guard lock(mutex_);
  json out = json::array();
  for (const auto& [key, e] : entries_) {
    out.push_back({{"tag", key.first},
                   {"model", key.second},
                   {"calls", e.calls},
                   {"cache_hits", e.cache_hits},
                   {"input_tokens", e.input_tokens},
                   {"output_tokens", e.output_tokens}});
  }
  return out.dump(2);
}

UsageLedger UsageLedger::from_json(const std::string& text) {
  UsageLedger ledger;
  json parsed = json::parse(text);
  for (const auto& row : parsed) {
    auto& e = ledger.entries_[{row.at("tag").get<std::string>(),
                               row.at("model").get<std::string>()}];
    e.calls = row.at("calls").get<std::int64_t>();
    e.cache_hits = row.at("cache_hits").get<std::int64_t>();
    e.input_tokens = row.at("input_tokens").get<std::int64_t>();
    e.output_tokens = row.at("output_tokens").get<std::int64_t>();
  }
  return ledger;
}

// ---------------------------------------------------------------------------
// PriceTable / cost

namespace {

Decimal decimal_from_json(const json& value) {
  if (value.is_string()) return Decimal::parse(value.get<std::string>());
  // Numbers go through nlohmann's shortest round-trip formatting, which
  // recovers the literal for prices written as plain JSON numbers.
  return Decimal::parse(value.dump());
}

}  // namespace

PriceTable PriceTable::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::precondition,
                "cannot read price table: " + path.string());
  }
  json parsed = json::parse(in);
  PriceTable table;
  for (const auto& [model, spec] : parsed.at("models").items()) {
    ModelPrice price;
    if (spec.contains("input_per_token")) {
      price.input_per_token = decimal_from_json(spec["input_per_token"]);
    }
    if (spec.contains("output_per_token")) {
      price.output_per_token = decimal_from_json(spec["output_per_token"]);
    }
    if (spec.contains("per_call")) {
      price.per_call = decimal_from_json(spec["per_call"]);
    }
    table.models[model] = price;
  }
  return table;
}

Decimal cost_of(const UsageLedger& ledger, const PriceTable& prices) {
  Decimal total;
  for (const auto& [key, e] : ledger.entries()) {
    auto it = prices.models.find(key.second);
    if (it == prices.models.end()) {
      throw Error(ErrorCode::cost_unpriced_model,
                  "no price for model: " + key.second);
    }
    total += it->second.per_call * e.calls;
    total += it->second.input_per_token * e.input_tokens;
    total += it->second.output_per_token * e.output_tokens;
  }
  return total;
}

Decimal cost_of_tag(const UsageLedger& ledger, const PriceTable& prices,
                    const std::string& tag) {
  Decimal total;
  for (const auto& [key, e] : ledger.entries()) {
    if (key.first != tag) continue;
    auto it = prices.models.find(key.second);
    if (it == prices.models.end()) {
      throw Error(ErrorCode::cost_unpriced_model,
                  "no price for model: " + key.second);
    }
    total += it->second.per_call * e.calls;
    total += it->second.input_per_token * e.input_tokens;
    total += it->second.output_per_token * e.output_tokens;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Gateway

Gateway::Gateway(std::shared_ptr<Backend> backend,
                 std::filesystem::path cache_dir, RetryPolicy retry)
    : backend_(std::move(backend)),
      backend_id_(backend_->id()),
      cache_dir_(std::move(cache_dir)),
      retry_(retry) {
  if (!cache_dir_.empty()) {
    std::filesystem::create_directories(cache_dir_);
  }
}

BackendResult Gateway::call_with_retry(const ChatRequest& request) {
  std::mt19937_64 rng(std::chrono::steady_clock::now().time_since_epoch().count());
  int attempt = 0;
  for (;;) {
    try {
      return backend_->complete(request);
    } catch (const TransientBackendError& err) {
      if (attempt >= retry_.retries) {
        throw Error(ErrorCode::gateway_transport,
                    std::string("backend failed after retries: ") + err.what());
      }
      int delay = retry_.base_delay_ms << attempt;
      if (delay > 0) {
        double jitter = 1.0 + retry_.jitter * ((rng() % 1000) / 1000.0);
        std::this_thread::sleep_for(
            std::chrono::milliseconds(static_cast<int>(delay * jitter)));
      }
      ++attempt;
    }
  }
}

ChatResponse Gateway::complete(const ChatRequest& request) {
  validate(request);
  std::string key = cache_key(backend_id_, request);

  // Single-flight: at most one backend call per key under concurrency.
  std::shared_ptr<std::mutex> key_lock;
  {
    std::lock_guard lock(keys_mutex_);
    auto& slot = key_locks_[key];
    if (!slot) slot = std::make_shared<std::mutex>();
    key_lock = slot;
  }
  std::lock_guard flight(*key_lock);

  std::filesystem::path cache_file;
  if (!cache_dir_.empty()) {
    cache_file = cache_dir_ / key;
    if (std::filesystem::exists(cache_file)) {
      std::ifstream in(cache_file);
      json stored = json::parse(in);
      ChatResponse response;
      response.text = stored.at("text").get<std::string>();
      response.input_tokens = stored.at("input_tokens").get<std::int64_t>();
      response.output_tokens = stored.at("output_tokens").get<std::int64_t>();
      response.cached = true;
      ledger_.record_cache_hit(request.tag, request.model,
                               response.input_tokens, response.output_tokens);
      return response;
    }
  }

  BackendResult result = call_with_retry(request);
  ledger_.record_call(request.tag, request.model, result.input_tokens,
                      result.output_tokens);

  if (!cache_file.empty()) {
    json stored = {{"text", result.text},
                   {"input_tokens", result.input_tokens},
                   {"output_tokens", result.output_tokens}};
    std::filesystem::path tmp = cache_file;
    tmp += ".tmp";
    {
      std::ofstream out(tmp);
      out << stored.dump(2);
    }
    std::filesystem::rename(tmp, cache_file);
  }

  ChatResponse response;
  response.text = result.text;
  response.input_tokens = result.input_tokens;
  response.output_tokens = result.output_tokens;
  response.cached = false;
  return response;
}

std::shared_ptr<Backend> make_backend(const std::string& selector) {
  if (selector.rfind("mock:", 0) == 0) {
    return MockBackend::from_script(selector.substr(5));
  }
  if (selector.rfind("http:", 0) == 0) {
    return std::make_shared<HttpBackend>(selector.substr(5), "");
  }
  const char* base = std::getenv("DSAI_API_BASE");
  const char* key = std::getenv("DSAI_API_KEY");
  if (!base) {
    throw Error(ErrorCode::precondition,
                "no backend configured: pass --backend or set DSAI_API_BASE");
  }
  return std::make_shared<HttpBackend>(base, key ? key : "");
}

}  // namespace dsai
