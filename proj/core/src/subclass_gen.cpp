#include "llmseg/subclass_gen.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_set>

#include <fmt/format.h>

#include "llmseg/error.hpp"
#include "llmseg/util.hpp"

namespace llmseg {

using nlohmann::json;

std::string_view to_string(PromptMode mode) { return mode == PromptMode::P1 ? "p1" : "p2"; }

PromptMode parse_prompt_mode(std::string_view text) {
  auto t = to_lower(trim(text));
  if (t == "p1") return PromptMode::P1;
  if (t == "p2") return PromptMode::P2;
  fail(ErrorCode::InvalidArgument, fmt::format("unknown prompt mode '{}' (expected p1 or p2)", text));
}

namespace {

void check_prompt_args(std::string_view class_name, std::size_t n) {
  if (trim(class_name).empty()) fail(ErrorCode::InvalidArgument, "class name must be non-empty");
  if (n == 0) fail(ErrorCode::InvalidArgument, "number of subclasses must be at least 1");
}

bool starts_with(std::string_view s, std::string_view p) { return s.substr(0, p.size()) == p; }
bool ends_with(std::string_view s, std::string_view p) {
  return s.size() >= p.size() && s.substr(s.size() - p.size()) == p;
}

// One pass of marker stripping; returns true if anything changed.
bool strip_once(std::string& item) {
  std::string before = item;
  item = trim(item);

  // "1." / "12)" numbering
  std::size_t digits = 0;
  while (digits < item.size() && std::isdigit(static_cast<unsigned char>(item[digits]))) ++digits;
  if (digits > 0 && digits < item.size() && (item[digits] == '.' || item[digits] == ')')) {
    item = trim(std::string_view(item).substr(digits + 1));
  }

  for (std::string_view bullet : {"-", "*", "•"}) {
    if (starts_with(item, bullet)) {
      item = trim(std::string_view(item).substr(bullet.size()));
      break;
    }
  }

  static constexpr std::pair<std::string_view, std::string_view> kQuotes[] = {
      {"\"", "\""}, {"'", "'"}, {"“", "”"}, {"‘", "’"}};
  for (auto [open, close] : kQuotes) {
    if (item.size() >= open.size() + close.size() && starts_with(item, open) && ends_with(item, close)) {
      item = trim(std::string_view(item).substr(open.size(), item.size() - open.size() - close.size()));
      break;
    }
  }

  while (!item.empty() && item.back() == '.') item.pop_back();
  item = trim(item);
  return item != before;
}

}  // namespace

std::string build_prompt_p1(std::string_view class_name, std::size_t n) {
  check_prompt_args(class_name, n);
  return fmt::format("Q: List {0} subclasses of the following: {1}\nA: Here are {0} commonly seen subclasses of {1}:",
                     n, class_name);
}

std::string build_prompt_p2(std::string_view class_name, std::size_t n) {
  check_prompt_args(class_name, n);
  return "Q1:List 3 subclasses of the person:\n"
         "A1:female, male, child\n"
         "Q2:List 3 subclasses of the boat:\n"
         "A2:fishing boat, cruise ship, ship\n" +
         build_prompt_p1(class_name, n);
}

std::string build_prompt(PromptMode mode, std::string_view class_name, std::size_t n) {
  return mode == PromptMode::P1 ? build_prompt_p1(class_name, n) : build_prompt_p2(class_name, n);
}

std::vector<std::string> parse_all_subclasses(std::string_view response_text) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  std::string current;
  auto flush = [&] {
    std::string item = current;
    current.clear();
    while (strip_once(item)) {
    }
    item = to_lower(item);
    if (!item.empty() && seen.insert(item).second) out.push_back(std::move(item));
  };
  for (char c : response_text) {
    if (c == ',' || c == '\n') {
      flush();
    } else {
      current.push_back(c);
    }
  }
  flush();
  return out;
}

std::vector<std::string> parse_subclasses(std::string_view response_text, std::size_t n) {
  if (trim(response_text).empty()) fail(ErrorCode::InvalidArgument, "empty LLM response");
  auto all = parse_all_subclasses(response_text);
  if (all.size() < n) throw GenerationIncomplete(n, std::move(all));
  all.resize(n);
  return all;
}

void validate(const SubclassSet& set) {
  if (trim(set.superclass).empty()) fail(ErrorCode::InvalidArgument, "subclass set has empty superclass");
  if (set.n == 0 || set.subclasses.size() != set.n) {
    fail(ErrorCode::InvalidArgument,
         fmt::format("subclass set for '{}' declares n={} but holds {} names", set.superclass, set.n,
                     set.subclasses.size()));
  }
  const auto super = to_lower(trim(set.superclass));
  std::unordered_set<std::string> seen;
  for (const auto& s : set.subclasses) {
    if (s.empty() || s != to_lower(trim(s))) {
      fail(ErrorCode::InvalidArgument, fmt::format("subclass '{}' is not normalized", s));
    }
    if (s == super) fail(ErrorCode::InvalidArgument, fmt::format("subclass list of '{}' repeats the superclass", super));
    if (!seen.insert(s).second) fail(ErrorCode::InvalidArgument, fmt::format("duplicate subclass '{}'", s));
  }
}

json to_json(const SubclassSet& set) {
  return json{{"superclass", set.superclass},         {"subclasses", set.subclasses},
              {"n", set.n},                           {"prompt_mode", std::string(to_string(set.prompt_mode))},
              {"model_id", set.model_id},             {"cache_key", set.cache_key}};
}

SubclassSet subclass_set_from_json(const json& j) {
  try {
    SubclassSet set;
    set.superclass = j.at("superclass").get<std::string>();
    set.subclasses = j.at("subclasses").get<std::vector<std::string>>();
    set.n = j.value("n", set.subclasses.size());
    set.prompt_mode = parse_prompt_mode(j.value("prompt_mode", std::string("p2")));
    set.model_id = j.value("model_id", std::string());
    set.cache_key = j.value("cache_key", std::string());
    validate(set);
    return set;
  } catch (const json::exception& e) {
    fail(ErrorCode::Format, fmt::format("malformed subclass set: {}", e.what()));
  }
}

void save_subclass_set(const std::filesystem::path& path, const SubclassSet& set) {
  atomic_write_file(path, to_json(set).dump(2) + "\n");
}

SubclassSet load_subclass_set(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    fail(ErrorCode::Format, fmt::format("{}: {}", path.string(), e.what()));
  }
  return subclass_set_from_json(j);
}

std::string subclass_cache_key(std::string_view model_id, PromptMode mode, std::string_view class_name,
                               std::size_t n) {
  return sha256_hex(fmt::format("{}\n{}\n{}\n{}", model_id, to_string(mode), class_name, n));
}

SubclassGenerator::SubclassGenerator(std::filesystem::path cache_dir, LlmEndpointConfig endpoint)
    : cache_dir_(std::move(cache_dir)),
      endpoint_(std::move(endpoint)),
      model_id_(endpoint_.model_id),
      max_tokens_(endpoint_.max_tokens) {}

SubclassGenerator::SubclassGenerator(std::filesystem::path cache_dir, std::shared_ptr<ChatClient> client,
                                     std::string model_id, int max_tokens)
    : cache_dir_(std::move(cache_dir)),
      model_id_(std::move(model_id)),
      max_tokens_(max_tokens),
      client_(std::move(client)) {}

std::shared_ptr<ChatClient> SubclassGenerator::client() {
  std::lock_guard lock(client_mutex_);
  if (!client_) client_ = make_chat_client(endpoint_);
  return client_;
}

std::size_t SubclassGenerator::endpoint_calls() const {
  std::lock_guard lock(client_mutex_);
  return client_ ? client_->calls() : 0;
}

std::optional<SubclassSet> SubclassGenerator::load_cached(std::string_view class_name, std::size_t n,
                                                          PromptMode mode) const {
  auto key = subclass_cache_key(model_id_, mode, class_name, n);
  auto path = cache_dir_ / (key + ".json");
  if (!std::filesystem::exists(path)) return std::nullopt;
  try {
    auto j = json::parse(read_file(path));
    return subclass_set_from_json(j.at("subclass_set"));
  } catch (const json::exception& e) {
    fail(ErrorCode::Format, fmt::format("corrupt cache entry {}: {}", path.string(), e.what()));
  }
}

SubclassSet SubclassGenerator::generate(std::string_view class_name, std::size_t n, PromptMode mode) {
  const std::string name = trim(class_name);
  auto prompt = build_prompt(mode, name, n);
  if (auto cached = load_cached(name, n, mode)) return *cached;

  PromptRequest request;
  request.prompt_text = prompt;
  request.temperature = 0.0;
  request.max_tokens = max_tokens_;
  request.model_id = model_id_;
  request.fixture_tag = fmt::format("{}.{}", slugify(name), to_string(mode));
  auto response = client()->complete(request);

  if (trim(response).empty()) throw GenerationIncomplete(n, {});
  auto names = parse_all_subclasses(response);
  const auto super = to_lower(name);
  std::erase(names, super);
  if (names.size() < n) throw GenerationIncomplete(n, std::move(names));
  names.resize(n);

  SubclassSet set;
  set.superclass = name;
  set.subclasses = std::move(names);
  set.n = n;
  set.prompt_mode = mode;
  set.model_id = model_id_;
  set.cache_key = subclass_cache_key(model_id_, mode, name, n);
  validate(set);

  json entry = {{"subclass_set", to_json(set)}, {"prompt", prompt}, {"raw_response", response}};
  atomic_write_file(cache_dir_ / (set.cache_key + ".json"), entry.dump(2) + "\n");
  return set;
}

}  // namespace llmseg
