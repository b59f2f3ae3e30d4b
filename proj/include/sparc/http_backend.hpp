#pragma once

// Client for chat-completions style HTTP endpoints (OpenAI-compatible
// servers such as vLLM or SGLang). The wire format is documented in
// docs/backend.md.

#include <map>
#include <mutex>
#include <string>

#include <json.hpp>

#include "sparc/backend.hpp"

namespace sparc {

struct HttpBackendConfig {
  std::string url;  // full endpoint, e.g. http://host:8000/v1/chat/completions
  std::string model;
  std::string api_key;  // sent as a bearer token when non-empty
  double timeout_s = 120.0;
  int max_attempts = 3;
  int backoff_initial_ms = 500;
  double backoff_multiplier = 2.0;
  std::optional<CoordSpace> box_space;

  void validate() const;
};

class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpBackendConfig cfg);

  CompletionResult complete(const ChatRequest& req) const override;
  std::string name() const override { return "http"; }
  std::optional<CoordSpace> box_space() const override { return cfg_.box_space; }

  // Serialized request body. Every retry of a request sends these bytes.
  std::string build_request_body(const ChatRequest& req) const;

  static std::optional<ChatResponse> parse_response_body(const std::string& body,
                                                         std::string* why);

 private:
  std::string image_url(const ImageRef& ref) const;

  HttpBackendConfig cfg_;
  std::string origin_;  // scheme://host:port
  std::string path_;
  mutable std::mutex cache_mu_;
  mutable std::map<std::string, std::string> url_cache_;
};

}  // namespace sparc
