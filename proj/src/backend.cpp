#include "sparc/backend.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <optional>
#include <stdexcept>
#include <thread>

namespace sparc {

void ChatRequest::validate() const {
  if (messages.empty()) {
    throw std::invalid_argument("chat request needs at least one message");
  }
  if (!(temperature >= 0.0)) {
    throw std::invalid_argument("temperature must be >= 0");
  }
  if (max_tokens < 1) throw std::invalid_argument("max_tokens must be >= 1");
}

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kNetwork:
      return "network";
    case ErrorKind::kHttpStatus:
      return "http_status";
    case ErrorKind::kSchema:
      return "schema";
    case ErrorKind::kTimeout:
      return "timeout";
    case ErrorKind::kImage:
      return "image";
    case ErrorKind::kInvalidRequest:
      return "invalid_request";
    case ErrorKind::kInjected:
      return "injected";
  }
  return "unknown";
}

std::string BackendError::describe() const {
  std::string out = std::string(to_string(kind)) + " error";
  if (!tag.sample_id.empty()) {
    out += " [sample " + tag.sample_id + ", " + std::string(to_string(tag.stage));
    if (tag.stage == Stage::kIrd) out += " rollout " + std::to_string(tag.rollout_index);
    out += "]";
  }
  if (http_status != 0) out += " HTTP " + std::to_string(http_status);
  if (attempts > 1) out += " after " + std::to_string(attempts) + " attempts";
  if (!message.empty()) out += ": " + message;
  return out;
}

std::vector<CompletionResult> batched_complete(const Backend& backend,
                                               std::span<const ChatRequest> reqs,
                                               int max_in_flight) {
  if (max_in_flight < 1) {
    throw std::invalid_argument("max_in_flight must be >= 1");
  }
  std::vector<std::optional<CompletionResult>> slots(reqs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < reqs.size(); i = next++) {
      try {
        slots[i].emplace(backend.complete(reqs[i]));
      } catch (const std::exception& e) {
        slots[i].emplace(BackendError{ErrorKind::kInvalidRequest, e.what(),
                                      reqs[i].tag});
      }
    }
  };
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(max_in_flight),
                                             reqs.size());
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  std::vector<CompletionResult> out;
  out.reserve(reqs.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

int estimate_text_tokens(std::string_view text) {
  int count = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
    } else if (std::isalpha(c) || c >= 0x80) {
      while (i < text.size() &&
             (std::isalpha(static_cast<unsigned char>(text[i])) ||
              static_cast<unsigned char>(text[i]) >= 0x80)) {
        ++i;
      }
      ++count;
    } else if (std::isdigit(c)) {
      while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
      ++count;
    } else {
      ++i;
      ++count;
    }
  }
  return count;
}

std::vector<const ImageRef*> image_blocks(const ChatMessage& msg) {
  std::vector<const ImageRef*> out;
  for (const auto& block : msg.content) {
    if (const auto* img = std::get_if<ImageRef>(&block)) out.push_back(img);
  }
  return out;
}

std::string joined_text(const ChatMessage& msg) {
  std::string out;
  for (const auto& block : msg.content) {
    if (const auto* t = std::get_if<TextBlock>(&block)) out += t->text;
  }
  return out;
}

}  // namespace sparc
