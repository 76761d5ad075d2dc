#include "llmseg/templates.hpp"

#include <algorithm>
#include <json.hpp>

#include <fmt/format.h>

#include "llmseg/error.hpp"
#include "llmseg/util.hpp"

namespace llmseg {

const std::vector<PromptTemplate>& default_templates() {
  static const std::vector<PromptTemplate> kTemplates = {
      {"T1", "a drawing of a {}"},
      {"T2", "a photo of the cool {}"},
      {"T3", "a pixelated photo of a {}"},
      {"T4", "a photo of a {}"},
      {"T5", "a cropped photo of the {}"},
      {"T6", "a jpeg cropped photo of the {}"},
      {"T7", "a bright photo of a {}"},
      {"T8", "a cropped photo of a {}"},
      {"T9", "a bad photo of the {}"},
      {"T10", "a photo of many {}"},
  };
  return kTemplates;
}

std::vector<PromptTemplate> load_templates(const std::filesystem::path& path) {
  try {
    auto j = nlohmann::json::parse(read_file(path));
    std::vector<PromptTemplate> out;
    for (const auto& e : j) {
      PromptTemplate t{e.at("id").get<std::string>(), e.at("pattern").get<std::string>()};
      check_template(t);
      out.push_back(std::move(t));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Format, fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::vector<PromptTemplate> select_templates(std::span<const PromptTemplate> registry,
                                             std::span<const std::string> ids) {
  std::vector<PromptTemplate> out;
  for (const auto& id : ids) {
    auto it = std::find_if(registry.begin(), registry.end(), [&](const auto& t) { return t.id == id; });
    if (it == registry.end()) fail(ErrorCode::Config, fmt::format("unknown template id '{}'", id));
    out.push_back(*it);
  }
  return out;
}

void check_template(const PromptTemplate& t) {
  std::size_t count = 0;
  for (auto pos = t.pattern.find("{}"); pos != std::string::npos; pos = t.pattern.find("{}", pos + 2)) ++count;
  if (count != 1) {
    fail(ErrorCode::InvalidArgument,
         fmt::format("template {} ('{}') has {} placeholders, expected exactly one", t.id, t.pattern, count));
  }
}

std::string expand(const PromptTemplate& t, std::string_view name) {
  check_template(t);
  auto pos = t.pattern.find("{}");
  std::string out = t.pattern.substr(0, pos);
  out.append(name);
  out.append(t.pattern.substr(pos + 2));
  return out;
}

std::vector<std::string> expand_templates(std::span<const std::string> names,
                                          std::span<const PromptTemplate> templates) {
  for (const auto& t : templates) check_template(t);
  std::vector<std::string> out;
  out.reserve(names.size() * templates.size());
  for (const auto& t : templates) {
    for (const auto& name : names) out.push_back(expand(t, name));
  }
  return out;
}

}  // namespace llmseg
