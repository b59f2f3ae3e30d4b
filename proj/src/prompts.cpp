#include "sparc/prompts.hpp"

#include <array>
#include <stdexcept>

namespace sparc {

namespace {

// Trailing spaces on some lines are part of the original templates.
constexpr std::string_view kBoxGrounding =
    "You are a helpful assistant capable of doing object detection. \n"
    "You will be given an image and a question for context. \n"
    "Your role is not to answer the question, but identify the objects the "
    "user will ask for and return their 2D bounding box and label in JSON "
    "format. \n"
    "The images will be very low resolution, but the objects will be there.\n"
    "Given this image and the following question:\n"
    "\n"
    "{question}\n"
    "\n"
    "DO NOT ANSWER THE QUESTION. Identify the relevant objects and return "
    "their 2D bounding box and label in JSON format.";

constexpr std::string_view kPointGrounding =
    "Question: {question}\n"
    "\n"
    "You are a helpful assistant. Your task is to POINT to the objects "
    "relevant to the user's question.";

constexpr std::string_view kAnswering =
    "You are a helpful assistant. You are given an image and relevant crops "
    "to answer the following question: \n"
    "\n"
    "Question: {question}\n"
    "\n"
    "Answer with the option's letter from the given choices directly. "
    "Predict the letter only.";

constexpr std::array<PromptSet, 2> kPromptSets{{
    {"qwen3vl", Modality::kBox, kBoxGrounding, kAnswering},
    {"molmo2", Modality::kPoint, kPointGrounding, kAnswering},
}};

}  // namespace

const PromptSet& prompt_set(std::string_view id) {
  for (const auto& set : kPromptSets) {
    if (set.id == id) return set;
  }
  throw std::invalid_argument("unknown prompt set '" + std::string(id) + "'");
}

std::string_view default_prompt_set(Modality modality) {
  return modality == Modality::kBox ? "qwen3vl" : "molmo2";
}

std::string render(std::string_view tmpl, std::string_view question) {
  std::string out;
  std::size_t pos = 0;
  for (auto slot = tmpl.find(kQuestionSlot); slot != std::string_view::npos;
       slot = tmpl.find(kQuestionSlot, pos)) {
    out.append(tmpl.substr(pos, slot - pos));
    out.append(question);
    pos = slot + kQuestionSlot.size();
  }
  out.append(tmpl.substr(pos));
  return out;
}

std::string question_with_choices(const BenchmarkSample& sample) {
  std::string out = sample.question;
  for (const auto& c : sample.choices) {
    out += '\n';
    out += c.letter;
    out += ". ";
    out += c.text;
  }
  return out;
}

}  // namespace sparc
