#pragma once

// Verbatim prompt templates for the two stages. Image blocks are separate
// message content blocks; the strings here are the text that follows them,
// with a single {question} slot.

#include <string>
#include <string_view>

#include "sparc/dataset.hpp"
#include "sparc/grounding_parser.hpp"

namespace sparc {

struct PromptSet {
  std::string_view id;
  Modality modality;
  std::string_view grounding;  // stage 1
  std::string_view answering;  // stage 2
};

inline constexpr std::string_view kQuestionSlot = "{question}";

// "qwen3vl" (box grounding) or "molmo2" (point grounding). Throws
// std::invalid_argument on anything else.
const PromptSet& prompt_set(std::string_view id);

// Default prompt set id for a grounding modality.
std::string_view default_prompt_set(Modality modality);

// Replaces every {question} slot.
std::string render(std::string_view tmpl, std::string_view question);

// Question followed by one "X. text" line per choice; this is what fills the
// answering template's slot. The grounding template gets the bare question.
std::string question_with_choices(const BenchmarkSample& sample);

}  // namespace sparc
