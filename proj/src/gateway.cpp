#include "sq/gateway.hpp"

#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "sq/digest.hpp"
#include "sq/errors.hpp"

namespace sq {

using nlohmann::json;

namespace {

std::string base64(const std::string& bytes) {
  static const char k[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  size_t i = 0;
  auto b = [&](size_t j) { return static_cast<uint32_t>(static_cast<uint8_t>(bytes[j])); };
  for (; i + 3 <= bytes.size(); i += 3) {
    uint32_t v = (b(i) << 16) | (b(i + 1) << 8) | b(i + 2);
    out += k[v >> 18];
    out += k[(v >> 12) & 63];
    out += k[(v >> 6) & 63];
    out += k[v & 63];
  }
  if (i + 1 == bytes.size()) {
    uint32_t v = b(i) << 16;
    out += k[v >> 18];
    out += k[(v >> 12) & 63];
    out += "==";
  } else if (i + 2 == bytes.size()) {
    uint32_t v = (b(i) << 16) | (b(i + 1) << 8);
    out += k[v >> 18];
    out += k[(v >> 12) & 63];
    out += k[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

std::string head_of(const std::string& s, size_t n = 80) {
  if (s.size() <= n) return s;
  return s.substr(0, n) + "...";
}

int line_of_byte(const std::string& text, size_t byte) {
  int line = 1;
  for (size_t i = 0; i < byte && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ChatUsage synth_usage(const ChatRequest& req, const std::string& reply) {
  ChatUsage u;
  u.prompt_tokens =
      static_cast<int64_t>((req.system_text.size() + req.content_text.size() + 3) / 4) +
      64 * static_cast<int64_t>(req.images.size());
  u.completion_tokens = static_cast<int64_t>((reply.size() + 3) / 4);
  return u;
}

}  // namespace

HttpConfig http_config_from_env() {
  HttpConfig cfg;
  if (const char* e = std::getenv("SPLATQUERY_ENDPOINT")) cfg.endpoint = e;
  if (const char* k = std::getenv("SPLATQUERY_API_KEY")) cfg.api_key = k;
  return cfg;
}

HttpGateway::HttpGateway(HttpConfig cfg) : cfg_(std::move(cfg)) {
  auto scheme = cfg_.endpoint.find("://");
  if (scheme == std::string::npos)
    throw ValidationError("gateway: endpoint must be a full URL, got \"" +
                          cfg_.endpoint + "\"");
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
  if (cfg_.endpoint.rfind("https", 0) == 0)
    throw ValidationError("gateway: built without TLS, https endpoint unusable");
#endif
  auto slash = cfg_.endpoint.find('/', scheme + 3);
  if (slash == std::string::npos) {
    base_ = cfg_.endpoint;
    path_ = "/";
  } else {
    base_ = cfg_.endpoint.substr(0, slash);
    path_ = cfg_.endpoint.substr(slash);
  }
}

ChatResponse HttpGateway::chat(const ChatRequest& req) {
  json body;
  body["model"] = req.model_tag;
  body["temperature"] = 0;
  body["max_tokens"] = req.max_tokens;
  json messages = json::array();
  if (!req.system_text.empty())
    messages.push_back({{"role", "system"}, {"content", req.system_text}});
  if (req.images.empty()) {
    messages.push_back({{"role", "user"}, {"content", req.content_text}});
  } else {
    json parts = json::array();
    parts.push_back({{"type", "text"}, {"text", req.content_text}});
    for (const auto& png : req.images)
      parts.push_back({{"type", "image_url"},
                       {"image_url", {{"url", "data:image/png;base64," + base64(png)}}}});
    messages.push_back({{"role", "user"}, {"content", parts}});
  }
  body["messages"] = messages;
  const std::string payload = body.dump();

  std::string last_error;
  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    if (attempt > 0)
      std::this_thread::sleep_for(std::chrono::duration<double>(
          cfg_.backoff_base_s * static_cast<double>(1 << (attempt - 1))));

    auto t0 = std::chrono::steady_clock::now();
    httplib::Client cli(base_);
    auto sec = static_cast<time_t>(cfg_.timeout_s);
    auto usec = static_cast<time_t>((cfg_.timeout_s - static_cast<double>(sec)) * 1e6);
    cli.set_connection_timeout(sec, usec);
    cli.set_read_timeout(sec, usec);
    cli.set_write_timeout(sec, usec);
    httplib::Headers headers;
    if (!cfg_.api_key.empty())
      headers.emplace("Authorization", "Bearer " + cfg_.api_key);

    auto res = cli.Post(path_, headers, payload, "application/json");
    if (!res) {
      last_error = "connection error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "status " + std::to_string(res->status) + ": " + head_of(res->body);
      continue;
    }
    if (res->status != 200)
      throw TransportError("gateway: status " + std::to_string(res->status) + ": " +
                           head_of(res->body));

    double ms = std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - t0)
                    .count();
    try {
      json j = json::parse(res->body);
      ChatResponse out;
      const json& content = j.at("choices").at(0).at("message").at("content");
      if (content.is_string()) {
        out.text = content.get<std::string>();
      } else {
        for (const auto& part : content)
          if (part.contains("text")) out.text += part["text"].get<std::string>();
      }
      if (j.contains("usage")) {
        out.usage.prompt_tokens = j["usage"].value("prompt_tokens", int64_t{0});
        out.usage.completion_tokens = j["usage"].value("completion_tokens", int64_t{0});
      }
      out.latency_ms = ms;
      return out;
    } catch (const json::exception& e) {
      throw TransportError(std::string("gateway: malformed response: ") + e.what() +
                           "; body: " + head_of(res->body));
    }
  }
  throw TransportError("gateway: " + cfg_.endpoint + " failed after " +
                       std::to_string(cfg_.max_retries + 1) +
                       " attempts; last: " + last_error);
}

void MockGateway::add_rule(MockRule rule) {
  Compiled c;
  if (!rule.match_regex.empty()) {
    if (!rule.match.empty())
      throw ValidationError("mock: rule sets both match and match_regex");
    try {
      c.regex = std::regex(rule.match_regex);
    } catch (const std::regex_error& e) {
      throw FormatError("mock: bad pattern \"" + rule.match_regex + "\": " + e.what());
    }
    c.use_regex = true;
  }
  c.rule = std::move(rule);
  rules_.push_back(std::move(c));
}

void MockGateway::set_default_reply(std::string reply) {
  default_reply_ = std::move(reply);
  has_default_ = true;
}

ChatResponse MockGateway::chat(const ChatRequest& req) {
  ++calls_;
  std::vector<std::string> digests;
  auto image_digests = [&]() -> const std::vector<std::string>& {
    if (digests.size() != req.images.size()) {
      digests.clear();
      for (const auto& png : req.images) digests.push_back(digest_hex(png));
    }
    return digests;
  };

  const std::string* reply = nullptr;
  for (const auto& c : rules_) {
    if (c.rule.image_count >= 0 &&
        static_cast<int>(req.images.size()) != c.rule.image_count)
      continue;
    if (!c.rule.image.empty()) {
      bool any = false;
      for (const auto& d : image_digests())
        if (d.find(c.rule.image) != std::string::npos) any = true;
      if (!any) continue;
    }
    bool hit = c.use_regex ? std::regex_search(req.content_text, c.regex)
                           : req.content_text.find(c.rule.match) != std::string::npos;
    if (hit) {
      reply = &c.rule.reply;
      break;
    }
  }
  if (reply == nullptr) {
    if (!has_default_)
      throw ValidationError("mock: no rule matched and no default reply; content: \"" +
                            head_of(req.content_text) + "\"");
    reply = &default_reply_;
  }
  ChatResponse out;
  out.text = *reply;
  out.usage = synth_usage(req, *reply);
  return out;
}

std::unique_ptr<MockGateway> MockGateway::from_script(const std::string& path) {
  const std::string text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError("mock script " + path + ": parse error at line " +
                      std::to_string(line_of_byte(text, e.byte)) + ": " + e.what());
  }
  if (!j.is_object())
    throw FormatError("mock script " + path + ": top level must be an object");

  auto gw = std::make_unique<MockGateway>();
  for (const auto& [key, value] : j.items()) {
    if (key == "default") {
      gw->set_default_reply(value.get<std::string>());
    } else if (key == "rules") {
      for (size_t i = 0; i < value.size(); ++i) {
        const json& r = value[i];
        MockRule rule;
        bool has_match = false;
        for (const auto& [rk, rv] : r.items()) {
          if (rk == "match") {
            rule.match = rv.get<std::string>();
            has_match = true;
          } else if (rk == "match_regex") {
            rule.match_regex = rv.get<std::string>();
            has_match = true;
          } else if (rk == "image") {
            rule.image = rv.get<std::string>();
          } else if (rk == "image_count") {
            rule.image_count = rv.get<int>();
          } else if (rk == "reply") {
            rule.reply = rv.get<std::string>();
          } else {
            throw FormatError("mock script " + path + ": unknown key \"" + rk +
                              "\" in rule " + std::to_string(i));
          }
        }
        if (!has_match)
          throw FormatError("mock script " + path + ": rule " + std::to_string(i) +
                            " needs match or match_regex");
        if (!r.contains("reply"))
          throw FormatError("mock script " + path + ": rule " + std::to_string(i) +
                            " needs a reply");
        gw->add_rule(std::move(rule));
      }
    } else {
      throw FormatError("mock script " + path + ": unknown key \"" + key + "\"");
    }
  }
  return gw;
}

std::unique_ptr<ReplayGateway> ReplayGateway::from_ledger(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  auto gw = std::make_unique<ReplayGateway>();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError("ledger " + path + ": parse error at line " +
                        std::to_string(lineno) + ": " + e.what());
    }
    Entry entry;
    try {
      entry.model = j.at("model").get<std::string>();
      entry.system = j.value("system", std::string());
      entry.content = j.at("content").get<std::string>();
      entry.reply = j.at("reply").get<std::string>();
      for (const auto& d : j.value("images", json::array()))
        entry.images.push_back(d.get<std::string>());
      entry.usage.prompt_tokens = j.value("prompt_tokens", int64_t{0});
      entry.usage.completion_tokens = j.value("completion_tokens", int64_t{0});
    } catch (const json::exception& e) {
      throw FormatError("ledger " + path + ": line " + std::to_string(lineno) + ": " +
                        e.what());
    }
    gw->entries_.push_back(std::move(entry));
  }
  return gw;
}

ChatResponse ReplayGateway::chat(const ChatRequest& req) {
  if (next_ >= entries_.size())
    throw ValidationError("replay: ledger exhausted at call " +
                          std::to_string(next_ + 1));
  const Entry& e = entries_[next_];
  auto diverged = [&](const std::string& field) {
    return ValidationError("replay: call " + std::to_string(next_ + 1) +
                           " diverges from the ledger (" + field + ")");
  };
  if (req.model_tag != e.model) throw diverged("model");
  if (req.system_text != e.system) throw diverged("system text");
  if (req.content_text != e.content) throw diverged("content text");
  if (req.images.size() != e.images.size()) throw diverged("image count");
  for (size_t i = 0; i < req.images.size(); ++i)
    if (digest_hex(req.images[i]) != e.images[i])
      throw diverged("image " + std::to_string(i));
  ++next_;
  ChatResponse out;
  out.text = e.reply;
  out.usage = e.usage;
  return out;
}

std::unique_ptr<ChatGateway> load_mock_script(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  std::string first;
  while (std::getline(in, first))
    if (first.find_first_not_of(" \t\r") != std::string::npos) break;
  json j = json::parse(first, nullptr, false);
  if (j.is_object() && j.contains("reply")) return ReplayGateway::from_ledger(path);
  return MockGateway::from_script(path);
}

MeteredGateway::MeteredGateway(ChatGateway& inner, Budget budget,
                               std::string ledger_path, int max_images)
    : inner_(inner),
      budget_(budget),
      ledger_path_(std::move(ledger_path)),
      max_images_(max_images) {}

ChatResponse MeteredGateway::chat(const ChatRequest& req) {
  if (req.content_text.empty())
    throw ValidationError("gateway: content text must not be empty");
  if (static_cast<int>(req.images.size()) > max_images_)
    throw ValidationError("gateway: " + std::to_string(req.images.size()) +
                          " images exceed the cap of " + std::to_string(max_images_));
  {
    std::lock_guard lock(mu_);
    if (budget_.max_calls > 0 && calls_used_ >= budget_.max_calls)
      throw BudgetError("budget: call limit " + std::to_string(budget_.max_calls) +
                        " reached");
    if (budget_.max_tokens > 0 && tokens_used_ >= budget_.max_tokens)
      throw BudgetError("budget: token limit " + std::to_string(budget_.max_tokens) +
                        " reached (" + std::to_string(tokens_used_) + " used)");
    ++calls_used_;
  }

  ChatResponse res = inner_.chat(req);

  std::lock_guard lock(mu_);
  tokens_used_ += res.usage.total();
  if (!ledger_path_.empty()) {
    json line;
    line["model"] = req.model_tag;
    line["system"] = req.system_text;
    line["content"] = req.content_text;
    json digests = json::array();
    for (const auto& png : req.images) digests.push_back(digest_hex(png));
    line["images"] = digests;
    line["reply"] = res.text;
    line["prompt_tokens"] = res.usage.prompt_tokens;
    line["completion_tokens"] = res.usage.completion_tokens;
    std::ofstream out(ledger_path_, std::ios::app | std::ios::binary);
    if (!out) throw ValidationError("cannot append to ledger " + ledger_path_);
    out << line.dump() << "\n";
  }
  return res;
}

}  // namespace sq
