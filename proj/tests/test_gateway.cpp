#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <atomic>
#include <thread>
#include <vector>

#include "doctest.h"
#include "dsai/decimal.hpp"
#include "dsai/error.hpp"
#include "dsai/gateway.hpp"
#include "dsai/prompts.hpp"
#include "httplib.h"
#include "json.hpp"
#include "testutil.hpp"

using namespace dsai;
using testutil::TempDir;

namespace {

ChatRequest simple_request(const std::string& content,
                           const std::string& tag = "test") {
  ChatRequest r;
  r.tag = tag;
  r.messages = {{Role::user, content}};
  return r;
}

class CountingBackend : public Backend {
 public:
  std::string id() const override { return "counting"; }
  BackendResult complete(const ChatRequest& request) override {
    ++calls;
    return {"reply to: " + request.messages.back().content, 10, 5};
  }
  std::atomic<int> calls{0};
};

class FlakyBackend : public Backend {
 public:
  explicit FlakyBackend(int failures) : failures_(failures) {}
  std::string id() const override { return "flaky"; }
  BackendResult complete(const ChatRequest&) override {
    ++attempts;
    if (attempts <= failures_) throw TransientBackendError("boom");
    return {"ok", 1, 1};
  }
  int attempts = 0;

 private:
  int failures_;
};

}  // namespace

TEST_CASE("decimal parse, canonical form, arithmetic") {
  CHECK(Decimal::parse("2.43746").str() == "2.43746");
  CHECK(Decimal::parse("400").str() == "400");
  CHECK(Decimal::parse("0.500000").str() == "0.5");
  CHECK(Decimal::parse("-0.0304").str() == "-0.0304");
  CHECK(Decimal::parse("0").str() == "0");
  CHECK(Decimal::parse("0.1") + Decimal::parse("0.2") == Decimal::parse("0.3"));
  CHECK(Decimal::parse("0.00496") * 400 == Decimal::parse("1.984"));
  CHECK_THROWS_AS(Decimal::parse("1.2.3"), Error);
  CHECK_THROWS_AS(Decimal::parse("abc"), Error);
  CHECK_THROWS_AS(Decimal::parse("0.0000000000001"), Error);  // 13 digits
}

TEST_CASE("batch cost scenario sums exactly in decimal arithmetic") {
  // Per-step totals: 10, 400, 10+10 and 50 calls at their per-call prices.
  Decimal step1 = Decimal::parse("0.00304") * 10;
  Decimal step2 = Decimal::parse("0.00496") * 400;
  Decimal step3 = (Decimal::parse("0.00579625") + Decimal::parse("0.00291625")) * 10;
  Decimal step4 = Decimal::parse("0.0018") * 50;
  CHECK(step1 == Decimal::parse("0.0304"));
  CHECK(step2 == Decimal::parse("1.984"));
  CHECK(step3 == Decimal::parse("0.087125"));
  CHECK(step4 == Decimal::parse("0.09"));
  CHECK(step1 + step2 + step3 + step4 == Decimal::parse("2.191525"));
}

TEST_CASE("cache key ignores the tag and covers the payload") {
  ChatRequest a = simple_request("hello", "stage1");
  ChatRequest b = simple_request("hello", "stage2");
  CHECK(cache_key("backend", a) == cache_key("backend", b));

  ChatRequest c = simple_request("hello!");
  CHECK(cache_key("backend", a) != cache_key("backend", c));
  CHECK(cache_key("other", a) != cache_key("backend", a));

  ChatRequest d = a;
  d.temperature = 0.7;
  CHECK(cache_key("backend", a) != cache_key("backend", d));
  ChatRequest e = a;
  e.max_output_tokens = 1;
  CHECK(cache_key("backend", a) != cache_key("backend", e));
  ChatRequest f = a;
  f.model = "bigger";
  CHECK(cache_key("backend", a) != cache_key("backend", f));
  ChatRequest g = a;
  g.messages[0].role = Role::system;
  CHECK(cache_key("backend", a) != cache_key("backend", g));
}

TEST_CASE("gateway validates requests") {
  Gateway gateway(std::make_shared<CountingBackend>());
  ChatRequest empty;
  CHECK_THROWS_AS(gateway.complete(empty), Error);
  ChatRequest assistant_first;
  assistant_first.messages = {{Role::assistant, "hi"}};
  CHECK_THROWS_AS(gateway.complete(assistant_first), Error);
  ChatRequest bad_temp = simple_request("x");
  bad_temp.temperature = -1;
  CHECK_THROWS_AS(gateway.complete(bad_temp), Error);
  ChatRequest bad_max = simple_request("x");
  bad_max.max_output_tokens = 0;
  CHECK_THROWS_AS(gateway.complete(bad_max), Error);
}

TEST_CASE("cache hit returns the stored response without a backend call") {
  TempDir tmp;
  auto backend = std::make_shared<CountingBackend>();
  Gateway gateway(backend, tmp.path());

  ChatResponse first = gateway.complete(simple_request("question"));
  CHECK_FALSE(first.cached);
  CHECK(backend->calls == 1);

  ChatResponse second = gateway.complete(simple_request("question"));
  CHECK(second.cached);
  CHECK(second.text == first.text);
  CHECK(second.input_tokens == first.input_tokens);
  CHECK(backend->calls == 1);

  // Different payload misses.
  gateway.complete(simple_request("other question"));
  CHECK(backend->calls == 2);

  const auto& entry = gateway.ledger().entries().at({"test", "default"});
  CHECK(entry.calls == 2);
  CHECK(entry.cache_hits == 1);

  SUBCASE("a fresh gateway over the same cache dir also hits") {
    auto backend2 = std::make_shared<CountingBackend>();
    Gateway gateway2(backend2, tmp.path());
    CHECK(gateway2.complete(simple_request("question")).cached);
    CHECK(backend2->calls == 0);
  }
}

TEST_CASE("identical concurrent requests reach the backend once") {
  TempDir tmp;
  auto backend = std::make_shared<CountingBackend>();
  Gateway gateway(backend, tmp.path());

  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&] { gateway.complete(simple_request("same")); });
  }
  for (auto& t : threads) t.join();
  CHECK(backend->calls == 1);
}

TEST_CASE("transient failures retry R times then fail with a gateway error") {
  RetryPolicy fast{3, 0, 0.0};

  SUBCASE("persistent failure: exactly retries+1 attempts") {
    auto backend = std::make_shared<FlakyBackend>(1000);
    Gateway gateway(backend, {}, fast);
    try {
      gateway.complete(simple_request("x"));
      FAIL("expected an Error");
    } catch (const Error& err) {
      CHECK(err.code() == ErrorCode::gateway_transport);
      CHECK(err.exit_code() == 3);
    }
    CHECK(backend->attempts == 4);
  }

  SUBCASE("recovers within the budget") {
    auto backend = std::make_shared<FlakyBackend>(2);
    Gateway gateway(backend, {}, fast);
    CHECK(gateway.complete(simple_request("x")).text == "ok");
    CHECK(backend->attempts == 3);
  }

  SUBCASE("non-transient errors are not retried") {
    auto backend = std::make_shared<MockBackend>();  // no rules
    Gateway gateway(backend, {}, fast);
    try {
      gateway.complete(simple_request("x"));
      FAIL("expected an Error");
    } catch (const Error& err) {
      CHECK(err.code() == ErrorCode::gateway_no_rule);
    }
    CHECK(backend->call_count() == 1);
  }
}

TEST_CASE("usage ledger accounting and additivity") {
  UsageLedger ledger;
  ledger.record_call("stage1", "m", 100, 50);
  ledger.record_call("stage1", "m", 100, 50);
  ledger.record_call("stage2", "m", 10, 5);
  ledger.record_cache_hit("stage2", "m", 10, 5);
  CHECK(ledger.calls_for_tag("stage1") == 2);
  CHECK(ledger.calls_for_tag("stage2") == 1);
  CHECK(ledger.cache_hits_for_tag("stage2") == 1);
  CHECK(ledger.total_calls() == 3);

  PriceTable prices;
  prices.models["m"] = {Decimal::parse("0.001"), Decimal::parse("0.002"),
                        Decimal::parse("0.01")};
  // Total equals the sum of per-tag costs, exactly.
  Decimal total = cost_of(ledger, prices);
  CHECK(total == cost_of_tag(ledger, prices, "stage1") +
                     cost_of_tag(ledger, prices, "stage2"));
  // stage1: 2 calls * 0.01 + 200 * 0.001 + 100 * 0.002 = 0.42
  CHECK(cost_of_tag(ledger, prices, "stage1") == Decimal::parse("0.42"));
  // Cache hits are zero-cost: stage2 = 0.01 + 0.01 + 0.01 = 0.03.
  CHECK(cost_of_tag(ledger, prices, "stage2") == Decimal::parse("0.03"));

  SUBCASE("unpriced model") {
    UsageLedger other;
    other.record_call("t", "mystery", 1, 1);
    try {
      cost_of(other, prices);
      FAIL("expected an Error");
    } catch (const Error& err) {
      CHECK(err.code() == ErrorCode::cost_unpriced_model);
    }
  }

  SUBCASE("json round trip") {
    UsageLedger loaded = UsageLedger::from_json(ledger.to_json());
    CHECK(loaded.entries() == ledger.entries());
  }
}

TEST_CASE("price table loads string and numeric prices") {
  PriceTable prices = PriceTable::from_json_file(testutil::data("prices.json"));
  CHECK(prices.models.at("step2-model").per_call == Decimal::parse("0.00496"));
  CHECK(prices.models.at("metered-model").input_per_token ==
        Decimal::parse("0.000002"));
  CHECK(prices.models.at("step1-model").input_per_token == Decimal{});
}

TEST_CASE("prompt templates substitute verbatim") {
  CHECK(render_template("a {x} c", {{"x", "b"}}) == "a b c");
  // Values are emitted verbatim, never re-expanded.
  CHECK(render_template("{x}", {{"x", "{y}"}}) == "{y}");
  // Non-placeholder braces are literal.
  CHECK(render_template("f() { return 1; }", {}) == "f() { return 1; }");
  CHECK(render_template("{a_1}{a_1}", {{"a_1", "z"}}) == "zz");

  try {
    render_template("{missing}", {});
    FAIL("expected an Error");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::template_unbound);
    CHECK(err.exit_code() == 4);
  }

  PromptRegistry prompts;
  CHECK(prompts.has("stage1_generate"));
  try {
    prompts.render("nope", {});
    FAIL("expected an Error");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::template_unknown);
  }
  prompts.set("custom", "hi {who}{retry_note}");
  CHECK(prompts.render("custom", {{"who", "you"}, {"retry_note", ""}}) ==
        "hi you");
}

TEST_CASE("mock backend matches rules in order and logs calls") {
  MockBackend mock;
  mock.add_const_rule("alpha", "first");
  mock.add_const_rule("alph", "second");
  CHECK(mock.complete(simple_request("xx alpha yy")).text == "first");
  CHECK(mock.complete(simple_request("alph only")).text == "second");
  CHECK(mock.call_count() == 2);
  CHECK(mock.calls()[0].messages[0].content == "xx alpha yy");
  try {
    mock.complete(simple_request("no rule here"));
    FAIL("expected an Error");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::gateway_no_rule);
    CHECK(err.exit_code() == 3);
  }
}

TEST_CASE("http backend speaks the chat-completions wire contract") {
  httplib::Server server;
  nlohmann::json seen_body;
  std::string seen_auth;
  std::string seen_path;
  int respond_status = 200;

  server.Post("/chat/completions",
              [&](const httplib::Request& req, httplib::Response& res) {
                seen_path = req.path;
                seen_auth = req.get_header_value("Authorization");
                seen_body = nlohmann::json::parse(req.body);
                if (respond_status != 200) {
                  res.status = respond_status;
                  return;
                }
                nlohmann::json reply = {
                    {"choices",
                     {{{"message", {{"role", "assistant"},
                                    {"content", "server says hi"}}}}}},
                    {"usage",
                     {{"prompt_tokens", 42}, {"completion_tokens", 7}}}};
                res.set_content(reply.dump(), "application/json");
              });

  int port = server.bind_to_any_port("127.0.0.1");
  std::thread server_thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  std::string base = "http://127.0.0.1:" + std::to_string(port);
  HttpBackend backend(base, "sk-test");

  ChatRequest request = simple_request("ping");
  request.model = "demo-model";
  request.temperature = 0.5;
  request.max_output_tokens = 99;
  request.messages.insert(request.messages.begin(),
                          {Role::system, "be brief"});

  BackendResult result = backend.complete(request);
  CHECK(result.text == "server says hi");
  CHECK(result.input_tokens == 42);
  CHECK(result.output_tokens == 7);
  CHECK(seen_path == "/chat/completions");
  CHECK(seen_auth == "Bearer sk-test");
  CHECK(seen_body.at("model") == "demo-model");
  CHECK(seen_body.at("temperature") == 0.5);
  CHECK(seen_body.at("max_tokens") == 99);
  REQUIRE(seen_body.at("messages").size() == 2);
  CHECK(seen_body["messages"][0]["role"] == "system");
  CHECK(seen_body["messages"][1]["content"] == "ping");

  SUBCASE("429 and 5xx are transient") {
    respond_status = 429;
    CHECK_THROWS_AS(backend.complete(request), TransientBackendError);
    respond_status = 503;
    CHECK_THROWS_AS(backend.complete(request), TransientBackendError);
  }

  SUBCASE("other non-200 statuses are hard gateway errors") {
    respond_status = 400;
    try {
      backend.complete(request);
      FAIL("expected an Error");
    } catch (const Error& err) {
      CHECK(err.code() == ErrorCode::gateway_status);
      CHECK(err.exit_code() == 3);
    }
  }

  SUBCASE("unreachable endpoints are transient") {
    HttpBackend dead("http://127.0.0.1:1", "");
    CHECK_THROWS_AS(dead.complete(request), TransientBackendError);
  }

  server.stop();
  server_thread.join();
}

TEST_CASE("make_backend selectors") {
  auto mock = make_backend(
      "mock:" + testutil::data("planted_mock.json").string());
  CHECK(mock->id().rfind("mock:", 0) == 0);
  CHECK_THROWS_AS(make_backend("mock:/nonexistent/script.json"), Error);
}
