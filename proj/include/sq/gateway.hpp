#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <regex>
#include <string>
#include <vector>

namespace sq {

struct ChatRequest {
  std::string system_text;
  std::string content_text;
  std::vector<std::string> images;  // PNG payloads, attached in order
  std::string model_tag;
  int max_tokens = 512;
};

struct ChatUsage {
  int64_t prompt_tokens = 0;
  int64_t completion_tokens = 0;
  int64_t total() const { return prompt_tokens + completion_tokens; }
};

struct ChatResponse {
  std::string text;
  ChatUsage usage;
  double latency_ms = 0;
};

class ChatGateway {
 public:
  virtual ~ChatGateway() = default;
  virtual ChatResponse chat(const ChatRequest& req) = 0;
};

// Chat-completions JSON over HTTP(S). Retries connection failures, 429 and
// 5xx with exponential backoff; any other non-200 fails immediately.
struct HttpConfig {
  std::string endpoint;  // full URL of the chat completions route
  std::string api_key;
  int max_retries = 3;      // attempts = 1 + max_retries
  double backoff_base_s = 0.5;
  double timeout_s = 60.0;
};

// SPLATQUERY_ENDPOINT / SPLATQUERY_API_KEY, unset fields left default.
HttpConfig http_config_from_env();

class HttpGateway : public ChatGateway {
 public:
  explicit HttpGateway(HttpConfig cfg);
  ChatResponse chat(const ChatRequest& req) override;

 private:
  HttpConfig cfg_;
  std::string base_;  // scheme://host[:port]
  std::string path_;
};

// One scripted reply. `match` is a plain substring of content_text,
// `match_regex` an ECMAScript pattern searched in content_text; set exactly
// one. `image` optionally restricts to requests where some attached image's
// hex digest contains it; `image_count` (when >= 0) to an exact attachment
// count.
struct MockRule {
  std::string match;
  std::string match_regex;
  std::string image;
  int image_count = -1;
  std::string reply;
};

// Deterministic scripted gateway: first matching rule wins, otherwise the
// default reply; with no default configured an unmatched request throws.
// Usage is synthesized from text lengths so budgets stay testable.
class MockGateway : public ChatGateway {
 public:
  void add_rule(MockRule rule);
  void set_default_reply(std::string reply);
  ChatResponse chat(const ChatRequest& req) override;
  size_t calls() const { return calls_; }

  // JSON file: {"default": text?, "rules": [{"match"|"match_regex", "reply",
  // "image"?, "image_count"?}, ...]}
  static std::unique_ptr<MockGateway> from_script(const std::string& path);

 private:
  struct Compiled {
    MockRule rule;
    std::regex regex;
    bool use_regex = false;
  };
  std::vector<Compiled> rules_;
  std::string default_reply_;
  bool has_default_ = false;
  size_t calls_ = 0;
};

// Strict-order replay of a recorded ledger: call i must carry the same model
// tag, content text and image digests as ledger entry i, and receives the
// recorded reply and usage. Divergence or exhaustion throws.
class ReplayGateway : public ChatGateway {
 public:
  static std::unique_ptr<ReplayGateway> from_ledger(const std::string& path);
  ChatResponse chat(const ChatRequest& req) override;
  size_t remaining() const { return entries_.size() - next_; }

 private:
  struct Entry {
    std::string model, system, content, reply;
    std::vector<std::string> images;  // hex digests
    ChatUsage usage;
  };
  std::vector<Entry> entries_;
  size_t next_ = 0;
};

// Sniffs the file: a recorded ledger (JSON lines with "reply") replays in
// order, anything else parses as a mock rule script.
std::unique_ptr<ChatGateway> load_mock_script(const std::string& path);

struct Budget {
  int64_t max_calls = 0;   // <= 0 means unlimited
  int64_t max_tokens = 0;  // <= 0 means unlimited
};

// Validation, budgets and the call ledger, wrapped around any gateway. Calls
// are charged before dispatch; token use is known only afterwards, so one
// call may overshoot max_tokens and the next one fails. Ledger lines carry
// no timestamps, which keeps reruns byte-comparable.
class MeteredGateway : public ChatGateway {
 public:
  MeteredGateway(ChatGateway& inner, Budget budget, std::string ledger_path = "",
                 int max_images = 16);
  ChatResponse chat(const ChatRequest& req) override;
  int64_t calls_used() const { return calls_used_; }
  int64_t tokens_used() const { return tokens_used_; }

 private:
  ChatGateway& inner_;
  Budget budget_;
  std::string ledger_path_;
  int max_images_;
  std::mutex mu_;
  int64_t calls_used_ = 0;
  int64_t tokens_used_ = 0;
};

}  // namespace sq
