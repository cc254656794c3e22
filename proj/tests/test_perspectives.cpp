#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "dsai/error.hpp"
#include "dsai/gateway.hpp"
#include "dsai/perspectives.hpp"
#include "dsai/prompts.hpp"
#include "testutil.hpp"

using namespace dsai;
using testutil::TempDir;

namespace {

const PromptRegistry kPrompts;

std::string block(const std::string& name, const std::string& criterion) {
  return "NAME: " + name + "\nCRITERION: " + criterion +
         "\nPROCESS: read carefully\nEXAMPLE: some text\n";
}

std::vector<Sample> mixed_subset() {
  return {{"p1", "zebra text", Label::positive},
          {"n1", "apple text", Label::negative},
          {"p2", "mango text", Label::positive}};
}

}  // namespace

TEST_CASE("parse_perspective_blocks extracts complete blocks only") {
  std::string text = block("Tone", "emotional tone") + "\n" +
                     "NAME: Incomplete\nCRITERION: missing the rest\n\n" +
                     block("Length", "word count");
  auto parsed = parse_perspective_blocks(text, 2);
  REQUIRE(parsed.size() == 2);
  CHECK(parsed[0].name == "Tone");
  CHECK(parsed[0].criterion == "emotional tone");
  CHECK(parsed[0].process == "read carefully");
  CHECK(parsed[0].example == "some text");
  CHECK(parsed[0].origin_step == 2);
  CHECK(parsed[1].name == "Length");

  // Case-insensitive field markers.
  auto lower = parse_perspective_blocks(
      "name: X\ncriterion: c\nprocess: p\nexample: e\n", 1);
  REQUIRE(lower.size() == 1);
  CHECK(lower[0].name == "X");

  CHECK(parse_perspective_blocks("no blocks at all", 1).empty());
}

TEST_CASE("generation prompt lists the subset sorted by id, class-blind") {
  auto subset = mixed_subset();
  std::string prompt =
      build_generation_prompt(kPrompts, subset, {}, 7, "");
  CHECK(prompt.find("7 distinct") != std::string::npos);
  CHECK(prompt.find("(none)") != std::string::npos);
  // Sorted by id: n1 < p1 < p2, regardless of class.
  auto apple = prompt.find("- apple text");
  auto zebra = prompt.find("- zebra text");
  auto mango = prompt.find("- mango text");
  REQUIRE(apple != std::string::npos);
  REQUIRE(zebra != std::string::npos);
  REQUIRE(mango != std::string::npos);
  CHECK(apple < zebra);
  CHECK(zebra < mango);
  // No label names leak into the prompt.
  CHECK(prompt.find("positive") == std::string::npos);
  CHECK(prompt.find("negative") == std::string::npos);

  std::vector<Perspective> previous = {{"tone", "Tone", "c", "p", "e", 1}};
  std::string second =
      build_generation_prompt(kPrompts, subset, previous, 7, "");
  CHECK(second.find("- Tone: c") != std::string::npos);
  CHECK(second.find("(none)") == std::string::npos);
}

TEST_CASE("context-hiding policy rejects leaky prompts") {
  GenerationConfig config;
  config.dataset_name = "slogans";
  config.blocklist = {"advertising"};

  CHECK_NOTHROW(check_context_hidden("analyze these texts", config));
  auto expect_leak = [&](const std::string& prompt) {
    try {
      check_context_hidden(prompt, config);
      FAIL("expected an Error for: ", prompt);
    } catch (const Error& err) {
      CHECK(err.code() == ErrorCode::stage);
    }
  };
  expect_leak("these are Slogans from a brand");
  expect_leak("texts about ADVERTISING campaigns");
  expect_leak("find high-quality traits");
  expect_leak("avoid low-quality traits");

  // The built-in stage-1 prompt itself passes the policy.
  auto subset = mixed_subset();
  check_context_hidden(
      build_generation_prompt(kPrompts, subset, {}, 5, ""), config);
}

TEST_CASE("generate_perspectives iterates steps and assigns unique ids") {
  auto backend = std::make_shared<MockBackend>();
  int step = 0;
  backend->add_rule("TASK: perspective generation", [&](const ChatRequest& r) {
    ++step;
    const std::string& prompt = r.messages.back().content;
    if (step == 1) {
      CHECK(prompt.find("(none)") != std::string::npos);
      return block("Tone", "c1") + block("tone", "c1 dup name") +
             block("Extra", "never kept: over per_step");
    }
    // Step 2 sees step 1's accepted perspectives.
    CHECK(prompt.find("- Tone: c1") != std::string::npos);
    return block("Length", "c2");
  });
  Gateway gateway(backend);

  GenerationConfig config;
  config.per_step = 2;
  config.steps = 2;
  auto subset = mixed_subset();
  PerspectiveSet set =
      generate_perspectives(subset, config, gateway, kPrompts);
  REQUIRE(set.perspectives.size() == 3);  // 2 from step 1 (truncated) + 1
  CHECK(set.perspectives[0].id == "tone");
  CHECK(set.perspectives[1].id == "tone_2");  // same slug, suffixed
  CHECK(set.perspectives[2].id == "length");
  CHECK(set.perspectives[0].origin_step == 1);
  CHECK(set.perspectives[2].origin_step == 2);

  SUBCASE("temperature flows into stage-1 requests") {
    CHECK(backend->calls()[0].temperature == doctest::Approx(1.0));
  }
}

TEST_CASE("generate_perspectives retries once then fails") {
  auto backend = std::make_shared<MockBackend>();
  int calls = 0;
  backend->add_rule("TASK: perspective generation", [&](const ChatRequest&) {
    ++calls;
    return std::string("nothing parsable");
  });
  Gateway gateway(backend);
  GenerationConfig config;
  config.per_step = 2;
  config.steps = 1;
  auto subset = mixed_subset();
  try {
    generate_perspectives(subset, config, gateway, kPrompts);
    FAIL("expected an Error");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::stage);
  }
  CHECK(calls == 2);  // original + one reprompt

  SUBCASE("single-class subsets are rejected") {
    std::vector<Sample> only_pos = {{"p1", "x", Label::positive}};
    CHECK_THROWS_AS(
        generate_perspectives(only_pos, config, gateway, kPrompts), Error);
  }
}

TEST_CASE("dedup keeps the earlier perspective") {
  PerspectiveSet set;
  set.perspectives = {{"tone", "Tone", "emotional tone", "p", "e", 1},
                      {"mood", "Mood", "overall mood", "p", "e", 1},
                      {"tone_2", " tone ", "same name again", "p", "e", 2},
                      {"length", "Length", "word count", "p", "e", 2}};

  auto backend = std::make_shared<MockBackend>();
  backend->add_rule("TASK: perspective deduplication", [](const ChatRequest& r) {
    const std::string& p = r.messages.back().content;
    // Tone and Mood cover the same aspect; everything else is distinct.
    bool tone_vs_mood = p.find("NAME: Tone") != std::string::npos &&
                        p.find("NAME: Mood") != std::string::npos;
    return tone_vs_mood ? std::string("yes") : std::string("no");
  });
  Gateway gateway(backend);

  PerspectiveSet deduped = dedup_perspectives(set, gateway, kPrompts);
  REQUIRE(deduped.perspectives.size() == 2);
  CHECK(deduped.perspectives[0].name == "Tone");  // earlier of the pair wins
  CHECK(deduped.perspectives[1].name == "Length");

  SUBCASE("unparsable verdicts keep the candidate") {
    auto vague = std::make_shared<MockBackend>();
    vague->add_const_rule("TASK: perspective deduplication", "maybe so");
    Gateway g2(vague);
    PerspectiveSet kept = dedup_perspectives(set, g2, kPrompts);
    CHECK(kept.perspectives.size() == 3);  // only the exact-name dup removed
  }
}

TEST_CASE("perspectives save/load round trip") {
  TempDir tmp;
  PerspectiveSet set;
  set.perspectives = {{"tone", "Tone", "c", "p", "e", 1},
                      {"length", "Length", "c2", "p2", "e2", 2}};
  save_perspectives(set, tmp.file("p.jsonl"));
  PerspectiveSet loaded = load_perspectives(tmp.file("p.jsonl"));
  CHECK(loaded.perspectives == set.perspectives);
}
