#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <string>

namespace llmseg {

/// One completion request. `fixture_tag` never goes on the wire; fixture
/// clients use it to locate canned responses.
struct PromptRequest {
  std::string prompt_text;
  double temperature = 0.0;
  int max_tokens = 256;
  std::string model_id;
  std::string fixture_tag;
};

class ChatClient {
 public:
  virtual ~ChatClient() = default;

  /// Returns the first choice's message content. Throws Error{Transport} on
  /// any network or protocol failure.
  virtual std::string complete(const PromptRequest& request) = 0;

  std::size_t calls() const noexcept { return calls_.load(); }

 protected:
  void count_call() noexcept { calls_.fetch_add(1); }

 private:
  std::atomic<std::size_t> calls_{0};
};

/// Splits "scheme://host[:port][/prefix]" into the part httplib wants and the
/// path prefix.
struct UrlParts {
  std::string scheme_host_port;
  std::string path_prefix;
};
UrlParts split_url(const std::string& url);

struct LlmEndpointConfig {
  std::string base_url;
  std::string api_key;
  std::string model_id = "gpt-3.5-turbo-instruct";
  int max_tokens = 256;
  int max_attempts = 4;
  std::chrono::milliseconds initial_backoff{500};
  double requests_per_second = 0.0;  // 0 = unlimited
  std::chrono::seconds timeout{60};
  std::filesystem::path fixture_dir;  // non-empty selects the fixture client

  /// Fills base_url and api_key from LLMSEG_API_URL / LLMSEG_API_KEY where
  /// the fields are still empty.
  void apply_env();
};

/// Chat-completions over HTTP(S): POST {base_url}/v1/chat/completions.
class HttpChatClient final : public ChatClient {
 public:
  explicit HttpChatClient(LlmEndpointConfig config);
  std::string complete(const PromptRequest& request) override;

 private:
  LlmEndpointConfig config_;
};

/// Serves canned responses from {dir}/{tag}.txt, falling back to the part of
/// the tag before the first '.', so "person.p2" can be answered by person.txt.
class FixtureChatClient final : public ChatClient {
 public:
  explicit FixtureChatClient(std::filesystem::path dir);
  std::string complete(const PromptRequest& request) override;

 private:
  std::filesystem::path dir_;
};

/// Enforces a minimum spacing between request starts across threads.
class RateLimiter {
 public:
  explicit RateLimiter(double requests_per_second);
  void acquire();

 private:
  std::mutex mutex_;
  std::chrono::steady_clock::duration interval_{};
  std::chrono::steady_clock::time_point next_{};
};

/// Retries transport failures with exponential backoff. Other errors pass
/// straight through.
class RetryingChatClient final : public ChatClient {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  RetryingChatClient(std::shared_ptr<ChatClient> inner, int max_attempts,
                     std::chrono::milliseconds initial_backoff, double requests_per_second = 0.0,
                     Sleeper sleeper = {});
  std::string complete(const PromptRequest& request) override;

 private:
  std::shared_ptr<ChatClient> inner_;
  int max_attempts_;
  std::chrono::milliseconds initial_backoff_;
  RateLimiter limiter_;
  Sleeper sleeper_;
};

/// Builds the client for a config: fixture, or HTTP wrapped in retries.
/// Throws Error{Config} naming LLMSEG_API_KEY when HTTP is selected without a key.
std::shared_ptr<ChatClient> make_chat_client(const LlmEndpointConfig& config);

}  // namespace llmseg
