#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "dsai/decimal.hpp"

namespace dsai {

enum class Role { system, user, assistant };

std::string role_name(Role role);

struct Message {
  Role role = Role::user;
  std::string content;
};

struct ChatRequest {
  std::string model = "default";
  std::vector<Message> messages;
  double temperature = 0.0;
  int max_output_tokens = 2048;
  std::string tag;  // stage label for accounting, excluded from the cache key
};

struct ChatResponse {
  std::string text;
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
  bool cached = false;
};

struct BackendResult {
  std::string text;
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string id() const = 0;
  virtual BackendResult complete(const ChatRequest& request) = 0;
};

// Scripted backend: ordered rules matched against the last user message.
// Actions are either canned text or small evaluators over the prompt, which
// is enough to drive every pipeline stage offline.
class MockBackend : public Backend {
 public:
  using Handler = std::function<std::string(const ChatRequest&)>;

  explicit MockBackend(std::string id = "mock") : id_(std::move(id)) {}

  // Rules from a JSON script file: {"rules":[{"contains":..., "action":...,
  // ...params}]}. See mock_actions.cpp for the action vocabulary.
  static std::unique_ptr<MockBackend> from_script(
      const std::filesystem::path& path);

  void add_rule(std::string contains, Handler handler);
  void add_const_rule(std::string contains, std::string text);

  std::string id() const override { return id_; }
  BackendResult complete(const ChatRequest& request) override;

  // Every request seen, in order. Tests scan these for prompt invariants.
  const std::vector<ChatRequest>& calls() const { return calls_; }
  int call_count() const { return static_cast<int>(calls_.size()); }

 private:
  struct Rule {
    std::string contains;
    Handler handler;
  };
  std::string id_;
  std::vector<Rule> rules_;
  std::vector<ChatRequest> calls_;
  std::mutex mutex_;
};

// Remote chat-completions backend: POST <base>/chat/completions.
// Configured from DSAI_API_BASE / DSAI_API_KEY when base/key are empty.
class HttpBackend : public Backend {
 public:
  HttpBackend(std::string base_url, std::string api_key);

  std::string id() const override;
  BackendResult complete(const ChatRequest& request) override;

 private:
  std::string base_url_;
  std::string api_key_;
};

// Per-model prices. per_call covers flat per-inference pricing; token prices
// cover metered pricing. All three are exact decimals.
struct ModelPrice {
  Decimal input_per_token;
  Decimal output_per_token;
  Decimal per_call;
};

struct PriceTable {
  std::map<std::string, ModelPrice> models;

  static PriceTable from_json_file(const std::filesystem::path& path);
};

struct UsageEntry {
  std::int64_t calls = 0;       // backend calls (cache hits excluded)
  std::int64_t cache_hits = 0;  // zero-cost, counted separately
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;

  bool operator==(const UsageEntry&) const = default;
};

// Accumulates usage keyed by (tag, model).
class UsageLedger {
 public:
  UsageLedger() = default;
  UsageLedger(UsageLedger&& other) noexcept
      : entries_(std::move(other.entries_)) {}
  UsageLedger& operator=(UsageLedger&& other) noexcept {
    entries_ = std::move(other.entries_);
    return *this;
  }

  void record_call(const std::string& tag, const std::string& model,
                   std::int64_t input_tokens, std::int64_t output_tokens);
  void record_cache_hit(const std::string& tag, const std::string& model,
                        std::int64_t input_tokens, std::int64_t output_tokens);

  const std::map<std::pair<std::string, std::string>, UsageEntry>& entries()
      const {
    return entries_;
  }

  std::int64_t calls_for_tag(const std::string& tag) const;
  std::int64_t cache_hits_for_tag(const std::string& tag) const;
  std::int64_t total_calls() const;

  std::string to_json() const;
  static UsageLedger from_json(const std::string& text);

 private:
  std::map<std::pair<std::string, std::string>, UsageEntry> entries_;
  mutable std::mutex mutex_;
};

// Exact decimal cost; throws Error(cost_unpriced_model) for unknown models.
Decimal cost_of(const UsageLedger& ledger, const PriceTable& prices);
Decimal cost_of_tag(const UsageLedger& ledger, const PriceTable& prices,
                    const std::string& tag);

// Collision-resistant key over (backend id, model, messages, temperature,
// max_output_tokens). Tag excluded.
std::string cache_key(const std::string& backend_id, const ChatRequest& request);

struct RetryPolicy {
  int retries = 3;
  int base_delay_ms = 100;
  double jitter = 0.25;
};

// Front door for all backend access: content-addressed caching, bounded
// retry, single-flight per key, usage accounting.
class Gateway {
 public:
  Gateway(std::shared_ptr<Backend> backend,
          std::filesystem::path cache_dir = {},
          RetryPolicy retry = {});

  ChatResponse complete(const ChatRequest& request);

  UsageLedger& ledger() { return ledger_; }
  const UsageLedger& ledger() const { return ledger_; }
  Backend& backend() { return *backend_; }
  const std::string& backend_id() const { return backend_id_; }

 private:
  BackendResult call_with_retry(const ChatRequest& request);

  std::shared_ptr<Backend> backend_;
  std::string backend_id_;
  std::filesystem::path cache_dir_;
  RetryPolicy retry_;
  UsageLedger ledger_;
  std::mutex keys_mutex_;
  std::map<std::string, std::shared_ptr<std::mutex>> key_locks_;
};

// Transient backend failure, retried by the gateway. Not part of the public
// error surface; it is converted to Error(gateway_transport) after R retries.
struct TransientBackendError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Builds a backend from a selector: "mock:<script path>" or "http:<base url>"
// or "" (environment DSAI_API_BASE).
std::shared_ptr<Backend> make_backend(const std::string& selector);

}  // namespace dsai
