#include "sparc/http_backend.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <thread>

#include <httplib.h>

namespace sparc {

namespace {

using nlohmann::json;

constexpr std::size_t kUrlCacheLimit = 32;

bool retryable_status(int status) { return status == 429 || status >= 500; }

}  // namespace

void HttpBackendConfig::validate() const {
  if (url.empty()) throw std::invalid_argument("HTTP backend needs a URL");
  if (!(timeout_s > 0.0)) throw std::invalid_argument("timeout must be positive");
  if (max_attempts < 1) throw std::invalid_argument("max_attempts must be >= 1");
  if (backoff_initial_ms < 0 || !(backoff_multiplier >= 1.0)) {
    throw std::invalid_argument("invalid backoff parameters");
  }
}

HttpBackend::HttpBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const auto scheme_end = cfg_.url.find("://");
  if (scheme_end == std::string::npos) {
    throw std::invalid_argument("backend URL needs a scheme: " + cfg_.url);
  }
  const auto path_start = cfg_.url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    origin_ = cfg_.url;
    path_ = "/";
  } else {
    origin_ = cfg_.url.substr(0, path_start);
    path_ = cfg_.url.substr(path_start);
  }
}

std::string HttpBackend::image_url(const ImageRef& ref) const {
  const std::string key = ref.descriptor();
  {
    std::lock_guard lock(cache_mu_);
    if (auto it = url_cache_.find(key); it != url_cache_.end()) return it->second;
  }
  std::string url = to_data_url(ref);
  std::lock_guard lock(cache_mu_);
  if (url_cache_.size() >= kUrlCacheLimit) url_cache_.clear();
  url_cache_.emplace(key, url);
  return url;
}

std::string HttpBackend::build_request_body(const ChatRequest& req) const {
  json messages = json::array();
  for (const auto& msg : req.messages) {
    json content = json::array();
    for (const auto& block : msg.content) {
      if (const auto* t = std::get_if<TextBlock>(&block)) {
        content.push_back({{"type", "text"}, {"text", t->text}});
      } else {
        const auto& img = std::get<ImageRef>(block);
        content.push_back(
            {{"type", "image_url"}, {"image_url", {{"url", image_url(img)}}}});
      }
    }
    messages.push_back({{"role", msg.role}, {"content", std::move(content)}});
  }
  json body = {{"model", req.model_name.empty() ? cfg_.model : req.model_name},
               {"messages", std::move(messages)},
               {"temperature", req.temperature},
               {"max_tokens", req.max_tokens}};
  if (req.seed) body["seed"] = *req.seed;
  return body.dump(-1, ' ', false, json::error_handler_t::replace);
}

std::optional<ChatResponse> HttpBackend::parse_response_body(const std::string& body,
                                                             std::string* why) {
  auto fail = [&](std::string msg) -> std::optional<ChatResponse> {
    if (why) *why = std::move(msg);
    return std::nullopt;
  };
  json doc = json::parse(body, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) return fail("response is not a JSON object");
  auto choices = doc.find("choices");
  if (choices == doc.end() || !choices->is_array() || choices->empty()) {
    return fail("response has no choices");
  }
  const json& first = (*choices)[0];
  if (!first.is_object() || !first.contains("message") ||
      !first["message"].is_object()) {
    return fail("choices[0].message missing");
  }
  const json& content = first["message"].value("content", json());
  ChatResponse resp;
  if (content.is_string()) {
    resp.text = content.get<std::string>();
  } else if (content.is_array()) {
    for (const auto& part : content) {
      if (part.is_object() && part.value("type", "") == "text" &&
          part.contains("text") && part["text"].is_string()) {
        resp.text += part["text"].get<std::string>();
      }
    }
  } else {
    return fail("choices[0].message.content is neither text nor parts");
  }
  if (auto usage = doc.find("usage"); usage != doc.end() && usage->is_object()) {
    auto count = [&](const char* key) {
      auto it = usage->find(key);
      return it != usage->end() && it->is_number_integer() ? it->get<int>() : 0;
    };
    resp.prompt_tokens = count("prompt_tokens");
    resp.completion_tokens = count("completion_tokens");
  } else {
    resp.completion_tokens = estimate_text_tokens(resp.text);
  }
  return resp;
}

CompletionResult HttpBackend::complete(const ChatRequest& req) const {
  try {
    req.validate();
  } catch (const std::exception& e) {
    return BackendError{ErrorKind::kInvalidRequest, e.what(), req.tag};
  }
  std::string body;
  try {
    body = build_request_body(req);
  } catch (const ImageError& e) {
    return BackendError{ErrorKind::kImage, e.what(), req.tag};
  }

  httplib::Client client(origin_);
  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
      std::chrono::duration<double>(cfg_.timeout_s));
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  httplib::Headers headers;
  if (!cfg_.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + cfg_.api_key);
  }

  BackendError last{ErrorKind::kNetwork, "no attempt made", req.tag};
  double delay_ms = cfg_.backoff_initial_ms;
  for (int attempt = 1; attempt <= cfg_.max_attempts; ++attempt) {
    if (attempt > 1) {
      std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(delay_ms));
      delay_ms *= cfg_.backoff_multiplier;
    }
    const auto start = std::chrono::steady_clock::now();
    auto res = client.Post(path_, headers, body, "application/json");
    const double elapsed = std::chrono::duration<double, std::milli>(
                               std::chrono::steady_clock::now() - start)
                               .count();
    if (!res) {
      const auto err = res.error();
      last = BackendError{err == httplib::Error::Read || err == httplib::Error::Write ||
                                  err == httplib::Error::ConnectionTimeout
                              ? ErrorKind::kTimeout
                              : ErrorKind::kNetwork,
                          httplib::to_string(err), req.tag, 0, attempt};
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      last = BackendError{ErrorKind::kHttpStatus, res->body.substr(0, 256), req.tag,
                          res->status, attempt};
      if (retryable_status(res->status)) continue;
      return last;
    }
    std::string why;
    auto parsed = parse_response_body(res->body, &why);
    if (!parsed) {
      return BackendError{ErrorKind::kSchema, why, req.tag, res->status, attempt};
    }
    parsed->latency_ms = elapsed;
    return *parsed;
  }
  return last;
}

}  // namespace sparc
