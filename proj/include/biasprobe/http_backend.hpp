#pragma once

// OpenAI-compatible chat-completions backend. One user message carrying the
// full prompt, no system message.

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include "httplib.h"

#include "biasprobe/llm_client.hpp"

namespace biasprobe {

struct EndpointUrl {
  std::string scheme_host_port;  // "https://api.example.com:443"
  std::string path;              // "/v1/chat/completions"
};

inline EndpointUrl split_endpoint(std::string_view url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos) throw Error("endpoint '" + std::string(url) + "' lacks a scheme");
  auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") throw Error("endpoint scheme must be http or https");
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string_view::npos) return {std::string(url), "/"};
  return {std::string(url.substr(0, path_start)), std::string(url.substr(path_start))};
}

inline nlohmann::json chat_request_body(const ModelConfig& cfg, std::string_view prompt) {
  return {{"model", cfg.model_name},
          {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
          {"temperature", cfg.temperature},
          {"max_tokens", cfg.max_tokens}};
}

// Extracts choices[0].message.content and finish_reason; throws a
// non-transient malformed_reply error otherwise.
inline BackendReply parse_chat_reply(std::string_view body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw BackendError("malformed_reply", std::string("reply is not JSON: ") + e.what(), false);
  }
  try {
    const auto& choice = j.at("choices").at(0);
    BackendReply r;
    r.text = choice.at("message").at("content").get<std::string>();
    if (auto it = choice.find("finish_reason"); it != choice.end() && it->is_string()) r.finish_reason = *it;
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw BackendError("malformed_reply", std::string("reply lacks choices[0].message.content: ") + e.what(), false);
  }
}

class OpenAIChatBackend final : public ChatBackend {
 public:
  BackendReply call(const CompletionRequest& req, const ModelConfig& cfg) override {
    auto url = split_endpoint(cfg.endpoint);
    httplib::Headers headers;
    if (!cfg.credential_env.empty()) {
      const char* key = std::getenv(cfg.credential_env.c_str());
      if (!key || !*key)
        throw BackendError("auth", "environment variable " + cfg.credential_env + " is not set", false);
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    httplib::Client cli(url.scheme_host_port);
    auto secs = cfg.timeout_ms / 1000;
    auto usecs = (cfg.timeout_ms % 1000) * 1000;
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    auto res = cli.Post(url.path, headers, chat_request_body(cfg, req.prompt).dump(), "application/json");
    if (!res) {
      auto err = res.error();
      bool timeout = err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
                     err == httplib::Error::Write;
      throw BackendError(timeout ? "timeout" : "transport", "request failed: " + httplib::to_string(err), true);
    }
    if (res->status == 401 || res->status == 403)
      throw BackendError("auth", "endpoint rejected credentials (HTTP " + std::to_string(res->status) + ")", false);
    if (res->status == 408) throw BackendError("timeout", "HTTP 408", true);
    if (res->status == 429 || res->status >= 500)
      throw BackendError("http_status", "HTTP " + std::to_string(res->status), true);
    if (res->status < 200 || res->status >= 300)
      throw BackendError("http_status", "HTTP " + std::to_string(res->status) + ": " + res->body, false);
    return parse_chat_reply(res->body);
  }

  ServedBy tag() const override { return ServedBy::live; }
};

inline std::shared_ptr<ChatBackend> make_backend(const ModelConfig& cfg) {
  if (cfg.backend == BackendKind::mock) return std::make_shared<MockBackend>();
  return std::make_shared<OpenAIChatBackend>();
}

}  // namespace biasprobe
