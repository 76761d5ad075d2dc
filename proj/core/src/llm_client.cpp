#include "llmseg/llm_client.hpp"

#include <httplib.h>
#include <json.hpp>

#include <thread>

#include <fmt/format.h>

#include "llmseg/error.hpp"
#include "llmseg/util.hpp"

namespace llmseg {

using nlohmann::json;

UrlParts split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) fail(ErrorCode::Config, fmt::format("URL without scheme: '{}'", url));
  auto path_start = url.find('/', scheme_end + 3);
  UrlParts parts;
  if (path_start == std::string::npos) {
    parts.scheme_host_port = url;
  } else {
    parts.scheme_host_port = url.substr(0, path_start);
    parts.path_prefix = url.substr(path_start);
    while (!parts.path_prefix.empty() && parts.path_prefix.back() == '/') parts.path_prefix.pop_back();
  }
  return parts;
}

void LlmEndpointConfig::apply_env() {
  if (base_url.empty()) base_url = env("LLMSEG_API_URL").value_or("");
  if (api_key.empty()) api_key = env("LLMSEG_API_KEY").value_or("");
}

HttpChatClient::HttpChatClient(LlmEndpointConfig config) : config_(std::move(config)) {}

std::string HttpChatClient::complete(const PromptRequest& request) {
  count_call();
  const auto url = split_url(config_.base_url);
  httplib::Client client(url.scheme_host_port);
  client.set_connection_timeout(config_.timeout);
  client.set_read_timeout(config_.timeout);
  client.set_write_timeout(config_.timeout);

  json body = {
      {"model", request.model_id},
      {"messages", json::array({{{"role", "user"}, {"content", request.prompt_text}}})},
      {"temperature", request.temperature},
      {"max_tokens", request.max_tokens},
  };
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  auto res = client.Post(url.path_prefix + "/v1/chat/completions", headers, body.dump(), "application/json");
  if (!res) {
    fail(ErrorCode::Transport, fmt::format("chat completion request failed: {}", httplib::to_string(res.error())));
  }
  if (res->status != 200) {
    fail(ErrorCode::Transport, fmt::format("chat completion returned HTTP {}: {}", res->status,
                                           res->body.substr(0, 200)));
  }
  try {
    auto parsed = json::parse(res->body);
    return parsed.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    fail(ErrorCode::Transport, fmt::format("malformed chat completion response: {}", e.what()));
  }
}

FixtureChatClient::FixtureChatClient(std::filesystem::path dir) : dir_(std::move(dir)) {}

std::string FixtureChatClient::complete(const PromptRequest& request) {
  count_call();
  namespace fs = std::filesystem;
  const std::string& tag = request.fixture_tag;
  fs::path exact = dir_ / (tag + ".txt");
  if (fs::exists(exact)) return read_file(exact);
  auto dot = tag.find('.');
  if (dot != std::string::npos) {
    fs::path base = dir_ / (tag.substr(0, dot) + ".txt");
    if (fs::exists(base)) return read_file(base);
  }
  fail(ErrorCode::Transport, fmt::format("no fixture response for '{}' in {}", tag, dir_.string()));
}

RateLimiter::RateLimiter(double requests_per_second) {
  if (requests_per_second > 0.0) {
    interval_ = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(1.0 / requests_per_second));
  }
}

void RateLimiter::acquire() {
  if (interval_ == std::chrono::steady_clock::duration::zero()) return;
  std::chrono::steady_clock::time_point slot;
  {
    std::lock_guard lock(mutex_);
    auto now = std::chrono::steady_clock::now();
    slot = std::max(now, next_);
    next_ = slot + interval_;
  }
  std::this_thread::sleep_until(slot);
}

RetryingChatClient::RetryingChatClient(std::shared_ptr<ChatClient> inner, int max_attempts,
                                       std::chrono::milliseconds initial_backoff,
                                       double requests_per_second, Sleeper sleeper)
    : inner_(std::move(inner)),
      max_attempts_(std::max(1, max_attempts)),
      initial_backoff_(initial_backoff),
      limiter_(requests_per_second),
      sleeper_(sleeper ? std::move(sleeper)
                       : Sleeper([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); })) {}

std::string RetryingChatClient::complete(const PromptRequest& request) {
  count_call();
  auto backoff = initial_backoff_;
  for (int attempt = 1;; ++attempt) {
    limiter_.acquire();
    try {
      return inner_->complete(request);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Transport || attempt >= max_attempts_) throw;
    }
    sleeper_(backoff);
    backoff *= 2;
  }
}

std::shared_ptr<ChatClient> make_chat_client(const LlmEndpointConfig& config) {
  // Fixture misses are permanent, so there is nothing to retry.
  if (!config.fixture_dir.empty()) return std::make_shared<FixtureChatClient>(config.fixture_dir);
  if (config.api_key.empty()) {
    fail(ErrorCode::Config, "no LLM API key: set LLMSEG_API_KEY (the subclass cache has no entry for this request)");
  }
  if (config.base_url.empty()) fail(ErrorCode::Config, "no LLM endpoint: set LLMSEG_API_URL");
  return std::make_shared<RetryingChatClient>(std::make_shared<HttpChatClient>(config), config.max_attempts,
                                              config.initial_backoff, config.requests_per_second);
}

}  // namespace llmseg
