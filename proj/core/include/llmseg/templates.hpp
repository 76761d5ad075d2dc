#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace llmseg {

/// A prompt pattern with exactly one "{}" placeholder.
struct PromptTemplate {
  std::string id;
  std::string pattern;

  bool operator==(const PromptTemplate&) const = default;
};

/// T1..T10, the stock "a photo of a {}"-style set.
const std::vector<PromptTemplate>& default_templates();

/// Reads a registry file: [{"id": "T4", "pattern": "a photo of a {}"}, ...].
std::vector<PromptTemplate> load_templates(const std::filesystem::path& path);

/// Picks templates by id, in the order given. Unknown ids are an error.
std::vector<PromptTemplate> select_templates(std::span<const PromptTemplate> registry,
                                             std::span<const std::string> ids);

void check_template(const PromptTemplate& t);

std::string expand(const PromptTemplate& t, std::string_view name);

/// |names|*|templates| prompts, template-major then name-minor.
std::vector<std::string> expand_templates(std::span<const std::string> names,
                                          std::span<const PromptTemplate> templates);

}  // namespace llmseg
