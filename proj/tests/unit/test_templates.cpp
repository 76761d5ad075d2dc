#include <doctest.h>

#include "llmseg/error.hpp"
#include "llmseg/templates.hpp"
#include "llmseg/util.hpp"
#include "test_support.hpp"

using namespace llmseg;

namespace {
std::vector<PromptTemplate> pick(std::initializer_list<std::string> ids) {
  std::vector<std::string> v(ids);
  return select_templates(default_templates(), v);
}
}  // namespace

TEST_CASE("expand_templates examples") {
  const std::vector<std::string> cat = {"cat"}, both = {"cat", "dog"}, none;
  CHECK(expand_templates(cat, pick({"T4"})) == std::vector<std::string>{"a photo of a cat"});
  CHECK(expand_templates(both, pick({"T1"})) == std::vector<std::string>{"a drawing of a cat", "a drawing of a dog"});
  CHECK(expand_templates(none, pick({"T4"})).empty());
  // Template-major order.
  CHECK(expand_templates(both, pick({"T1", "T10"})) ==
        std::vector<std::string>{"a drawing of a cat", "a drawing of a dog", "a photo of many cat", "a photo of many dog"});
}

TEST_CASE("registry") {
  CHECK(default_templates().size() == 10);
  for (const auto& t : default_templates()) CHECK_NOTHROW(check_template(t));
  CHECK_THROWS_AS(pick({"T11"}), Error);
  CHECK_THROWS_AS(check_template({"X", "a {} of {}"}), Error);
  CHECK_THROWS_AS(check_template({"X", "no placeholder"}), Error);
}

TEST_CASE("shipped templates.json matches the built-in registry") {
  const auto loaded = load_templates(std::filesystem::path(LLMSEG_FIXTURES_DIR) / "../../core/data/templates.json");
  REQUIRE(loaded.size() == default_templates().size());
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].id == default_templates()[i].id);
    CHECK(loaded[i].pattern == default_templates()[i].pattern);
  }
  test::TempDir tmp("tpl");
  atomic_write_file(tmp / "bad.json", R"([{"id":"Z","pattern":"{} {}"}])");
  CHECK_THROWS_AS(load_templates(tmp / "bad.json"), Error);
}
