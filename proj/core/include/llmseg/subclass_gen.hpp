#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "llmseg/llm_client.hpp"

namespace llmseg {

enum class PromptMode { P1, P2 };

std::string_view to_string(PromptMode mode);
PromptMode parse_prompt_mode(std::string_view text);

/// A superclass with its LLM-generated subclass names.
struct SubclassSet {
  std::string superclass;
  std::vector<std::string> subclasses;
  std::size_t n = 0;
  PromptMode prompt_mode = PromptMode::P2;
  std::string model_id;
  std::string cache_key;

  bool operator==(const SubclassSet&) const = default;
};

/// Throws Error{InvalidArgument} if any SubclassSet invariant is violated.
void validate(const SubclassSet& set);

nlohmann::json to_json(const SubclassSet& set);
SubclassSet subclass_set_from_json(const nlohmann::json& j);
void save_subclass_set(const std::filesystem::path& path, const SubclassSet& set);
SubclassSet load_subclass_set(const std::filesystem::path& path);

/// Zero-shot prompt:
///   Q: List {n} subclasses of the following: {class}
///   A: Here are {n} commonly seen subclasses of {class}:
std::string build_prompt_p1(std::string_view class_name, std::size_t n);

/// Two fixed few-shot examples (person, boat) followed by the P1 query.
std::string build_prompt_p2(std::string_view class_name, std::size_t n);

std::string build_prompt(PromptMode mode, std::string_view class_name, std::size_t n);

/// Every distinct normalized name in a response, in first-seen order.
std::vector<std::string> parse_all_subclasses(std::string_view response_text);

/// First n distinct names; throws GenerationIncomplete if fewer exist.
std::vector<std::string> parse_subclasses(std::string_view response_text, std::size_t n);

std::string subclass_cache_key(std::string_view model_id, PromptMode mode, std::string_view class_name,
                               std::size_t n);

/// Cache-first subclass generation. The chat client is created on the first
/// cache miss, so a warm cache works without credentials.
class SubclassGenerator {
 public:
  SubclassGenerator(std::filesystem::path cache_dir, LlmEndpointConfig endpoint);
  SubclassGenerator(std::filesystem::path cache_dir, std::shared_ptr<ChatClient> client, std::string model_id,
                    int max_tokens = 256);

  SubclassSet generate(std::string_view class_name, std::size_t n, PromptMode mode);

  std::optional<SubclassSet> load_cached(std::string_view class_name, std::size_t n, PromptMode mode) const;

  const std::filesystem::path& cache_dir() const { return cache_dir_; }

  /// Calls that reached the chat client (cache misses).
  std::size_t endpoint_calls() const;

 private:
  std::shared_ptr<ChatClient> client();

  std::filesystem::path cache_dir_;
  LlmEndpointConfig endpoint_;
  std::string model_id_;
  int max_tokens_;
  mutable std::mutex client_mutex_;
  std::shared_ptr<ChatClient> client_;
};

}  // namespace llmseg
