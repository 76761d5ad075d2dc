#include <doctest.h>

#include <fmt/format.h>

#include "llmseg/error.hpp"
#include "llmseg/subclass_gen.hpp"
#include "llmseg/util.hpp"
#include "test_support.hpp"

using namespace llmseg;

namespace {

class CannedClient final : public ChatClient {
 public:
  explicit CannedClient(std::string reply) : reply_(std::move(reply)) {}
  std::string complete(const PromptRequest& request) override {
    count_call();
    last = request;
    return reply_;
  }
  PromptRequest last;

 private:
  std::string reply_;
};

}  // namespace

TEST_CASE("prompt builders match the checked-in fixtures byte for byte") {
  const auto dir = test::fixtures() / "prompts";
  CHECK(build_prompt_p1("person", 10) == read_file(dir / "p1_person_10.txt"));
  CHECK(build_prompt_p1("boat", 3) == read_file(dir / "p1_boat_3.txt"));
  CHECK(build_prompt_p2("cow", 10) == read_file(dir / "p2_cow_10.txt"));
}

TEST_CASE("prompt builders") {
  CHECK(build_prompt_p1("boat", 1) == "Q: List 1 subclasses of the following: boat\nA: Here are 1 commonly seen subclasses of boat:");
  CHECK(build_prompt_p1("dining table", 3).find("following: dining table\n") != std::string::npos);
  // The query class may coincide with a few-shot class.
  const auto p = build_prompt_p2("person", 3);
  CHECK(p.rfind("Q1:List 3 subclasses of the person:\nA1:female, male, child\n", 0) == 0);
  CHECK(p.ends_with(build_prompt_p1("person", 3)));
  CHECK(build_prompt(PromptMode::P1, "cat", 2) == build_prompt_p1("cat", 2));
  CHECK_THROWS_AS(build_prompt_p1("", 3), Error);
  CHECK_THROWS_AS(build_prompt_p2("cat", 0), Error);
}

TEST_CASE("parse_subclasses examples") {
  CHECK(parse_subclasses("female, male, child", 3) == std::vector<std::string>{"female", "male", "child"});
  CHECK(parse_subclasses("1. Tabby\n2. Siamese\n3. Persian", 3) == std::vector<std::string>{"tabby", "siamese", "persian"});
  CHECK(parse_subclasses("fishing boat, cruise ship, ship", 2) == std::vector<std::string>{"fishing boat", "cruise ship"});
  CHECK(parse_subclasses("- \"Red\"\n* 'Blue'.\n• green\n2) yellow", 4) ==
        std::vector<std::string>{"red", "blue", "green", "yellow"});

  try {
    parse_subclasses("cat, Cat, CAT", 3);
    FAIL("expected GenerationIncomplete");
  } catch (const GenerationIncomplete& e) {
    CHECK(e.code() == ErrorCode::GenerationIncomplete);
    CHECK(e.requested() == 3);
    CHECK(e.partial() == std::vector<std::string>{"cat"});
  }
}

TEST_CASE("parse_subclasses is idempotent on its own joined output (property)") {
  test::Gen g(11);
  const std::vector<std::string> words = {"red", "Blue", "big cat", "tiny", "sea  lion", "Ox", "kid", "old"};
  for (int trial = 0; trial < 300; ++trial) {
    std::string response;
    const auto count = g.size(1, 8);
    for (std::size_t i = 0; i < count; ++i) {
      const auto& w = words[g.size(0, words.size() - 1)];
      switch (g.size(0, 3)) {
        case 0: response += fmt::format("{}. {}\n", i + 1, w); break;
        case 1: response += fmt::format("- \"{}\",", w); break;
        case 2: response += fmt::format(" {} ,", w); break;
        default: response += fmt::format("• '{}'\n", w); break;
      }
    }
    const auto first = parse_all_subclasses(response);
    std::string joined;
    for (const auto& s : first) joined += (joined.empty() ? "" : ", ") + s;
    CHECK(parse_all_subclasses(joined) == first);
    for (const auto& s : first) {
      CHECK(!s.empty());
      CHECK(s == to_lower(trim(s)));
    }
  }
}

TEST_CASE("generate is cache-first") {
  test::TempDir tmp("gen");
  auto client = std::make_shared<CannedClient>("female, male, child");
  SubclassGenerator gen(tmp.path(), client, "test-model");

  const auto set = gen.generate("person", 3, PromptMode::P2);
  CHECK(set.superclass == "person");
  CHECK(set.subclasses == std::vector<std::string>{"female", "male", "child"});
  CHECK(set.n == 3);
  CHECK(client->calls() == 1);
  CHECK(client->last.prompt_text == build_prompt_p2("person", 3));
  CHECK(client->last.temperature == 0.0);
  CHECK(client->last.model_id == "test-model");

  const auto again = gen.generate("person", 3, PromptMode::P2);
  CHECK(again == set);
  CHECK(client->calls() == 1);

  // A warm cache needs no credentials at all.
  LlmEndpointConfig no_key;
  no_key.model_id = "test-model";
  SubclassGenerator cold_client(tmp.path(), no_key);
  CHECK(cold_client.generate("person", 3, PromptMode::P2) == set);
  CHECK(cold_client.endpoint_calls() == 0);

  // Different mode or n is a different key.
  gen.generate("person", 3, PromptMode::P1);
  CHECK(client->calls() == 2);

  auto entry = read_file(tmp.path() / (set.cache_key + ".json"));
  CHECK(entry.find("raw_response") != std::string::npos);
}

TEST_CASE("generate drops the superclass name and reports short responses") {
  test::TempDir tmp("gen2");
  auto client = std::make_shared<CannedClient>("Cat, tabby, siamese, persian");
  SubclassGenerator gen(tmp.path(), client, "m");
  CHECK(gen.generate("cat", 3, PromptMode::P1).subclasses == std::vector<std::string>{"tabby", "siamese", "persian"});

  auto short_client = std::make_shared<CannedClient>("tabby, siamese");
  SubclassGenerator gen2(tmp.path() / "other", short_client, "m");
  try {
    gen2.generate("cat", 5, PromptMode::P2);
    FAIL("expected GenerationIncomplete");
  } catch (const GenerationIncomplete& e) {
    CHECK(e.partial().size() == 2);
  }
  CHECK(!gen2.load_cached("cat", 5, PromptMode::P2).has_value());
}

TEST_CASE("fixture endpoint and missing key") {
  test::TempDir tmp("gen3");
  LlmEndpointConfig cfg;
  cfg.fixture_dir = test::fixtures() / "llm";
  SubclassGenerator gen(tmp.path(), cfg);
  CHECK(gen.generate("cow", 10, PromptMode::P2).subclasses.front() == "holstein");
  CHECK(gen.generate("boat", 3, PromptMode::P2).subclasses ==
        std::vector<std::string>{"fishing boat", "cruise ship", "ship"});

  LlmEndpointConfig none;
  none.base_url = "http://127.0.0.1:9";
  SubclassGenerator cold(tmp.path() / "cold", none);
  try {
    cold.generate("person", 3, PromptMode::P2);
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Config);
    CHECK(std::string(e.what()).find("LLMSEG_API_KEY") != std::string::npos);
  }
}

TEST_CASE("subclass set json round trip and validation") {
  test::TempDir tmp("set");
  SubclassSet s{"boat", {"fishing boat", "cruise ship", "ship"}, 3, PromptMode::P2, "m", "k"};
  save_subclass_set(tmp / "boat.json", s);
  CHECK(load_subclass_set(tmp / "boat.json") == s);

  auto bad = s;
  bad.subclasses[1] = "Ship";
  CHECK_THROWS_AS(validate(bad), Error);
  bad = s;
  bad.subclasses[2] = "boat";
  CHECK_THROWS_AS(validate(bad), Error);
  bad = s;
  bad.subclasses[2] = "ship";
  bad.subclasses[1] = "ship";
  CHECK_THROWS_AS(validate(bad), Error);
  bad = s;
  bad.n = 4;
  CHECK_THROWS_AS(validate(bad), Error);
}
