#pragma once

// Uniform access to vision-language inference. A backend answers one chat
// request at a time and must be safe to call from several threads at once;
// batched_complete fans a request list out under an in-flight bound.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "sparc/geometry.hpp"
#include "sparc/grounding_parser.hpp"
#include "sparc/image.hpp"

namespace sparc {

struct TextBlock {
  std::string text;
  friend bool operator==(const TextBlock&, const TextBlock&) = default;
};

using ContentBlock = std::variant<TextBlock, ImageRef>;

struct ChatMessage {
  std::string role = "user";
  std::vector<ContentBlock> content;
};

// Identity of a request inside a harness run; carried into errors and used
// by the oracle to look up ground truth.
struct RequestTag {
  std::string sample_id;
  Stage stage = Stage::kIrd;
  int rollout_index = 0;
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  double temperature = 0.0;  // 0 means greedy
  int max_tokens = 512;
  std::string model_name;
  std::optional<std::uint64_t> seed;
  RequestTag tag;

  void validate() const;
};

struct ChatResponse {
  std::string text;
  int prompt_tokens = 0;
  int completion_tokens = 0;
  double latency_ms = 0.0;
};

enum class ErrorKind { kNetwork, kHttpStatus, kSchema, kTimeout, kImage, kInvalidRequest, kInjected };

std::string_view to_string(ErrorKind kind);

struct BackendError {
  ErrorKind kind = ErrorKind::kNetwork;
  std::string message;
  RequestTag tag;
  int http_status = 0;
  int attempts = 0;

  std::string describe() const;
};

class CompletionResult {
 public:
  CompletionResult(ChatResponse r) : value_(std::move(r)) {}  // NOLINT
  CompletionResult(BackendError e) : value_(std::move(e)) {}  // NOLINT

  bool ok() const { return std::holds_alternative<ChatResponse>(value_); }
  const ChatResponse& response() const { return std::get<ChatResponse>(value_); }
  const BackendError& error() const { return std::get<BackendError>(value_); }

 private:
  std::variant<ChatResponse, BackendError> value_;
};

class Backend {
 public:
  virtual ~Backend() = default;

  virtual CompletionResult complete(const ChatRequest& req) const = 0;
  virtual std::string name() const = 0;

  // Coordinate space the model writes boxes in, when known.
  virtual std::optional<CoordSpace> box_space() const { return std::nullopt; }
};

// Results come back in request order. At most max_in_flight requests are
// outstanding at once; a failed request never cancels its siblings.
std::vector<CompletionResult> batched_complete(const Backend& backend,
                                               std::span<const ChatRequest> reqs,
                                               int max_in_flight);

// Rough BPE-style count: runs of letters, runs of digits and single
// punctuation characters each count as one token.
int estimate_text_tokens(std::string_view text);

std::vector<const ImageRef*> image_blocks(const ChatMessage& msg);
std::string joined_text(const ChatMessage& msg);

}  // namespace sparc
