#pragma once

// Two-stage orchestration. Stage 1 asks the model only for the regions that
// matter to the question (N rollouts, fused with WBF); stage 2 answers the
// question from the base image plus crops cut from the full-resolution
// original. Both stages open with the same base-image block so a backend can
// reuse the cached image prefix.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sparc/backend.hpp"
#include "sparc/dataset.hpp"
#include "sparc/fusion.hpp"
#include "sparc/geometry.hpp"
#include "sparc/grounding_parser.hpp"

namespace sparc {

struct PipelineConfig {
  ResolutionBudget budget;
  int consistency_n = 1;
  // Unset: 0.7 when consistency_n > 1, greedy otherwise.
  std::optional<double> ird_temperature;
  FusionConfig fusion;
  Modality modality = Modality::kBox;
  int point_side = 256;
  TokenCounter patch;
  std::uint64_t global_seed = 0;
  // Empty: the default set for the modality.
  std::string prompt_set;
  // Unset: whatever the backend reports, else inferred per output.
  std::optional<CoordSpace> box_space;
  CoordSpace point_space = CoordSpace::kPercent;
  int max_in_flight = 8;
  int ird_max_tokens = 512;
  int reasoning_max_tokens = 16;
  std::string model_name;
  // Skip stage 1: single-prompt baseline with no crops.
  bool native = false;

  double resolved_ird_temperature() const;
  std::string resolved_prompt_set() const;
  void validate() const;
};

inline constexpr double kConsistencyTemperature = 0.7;

struct EvalRecord {
  std::string sample_id;
  std::string budget;
  std::string modality;
  int consistency_n = 1;
  int raw_box_count = 0;
  std::vector<FusedBox> fused_boxes;
  std::vector<BoundingBox> crop_regions;
  std::vector<ImageDims> crop_dims;
  std::int64_t stage1_visual_tokens = 0;
  std::int64_t stage1_prompt_text_tokens = 0;
  std::int64_t stage1_completion_tokens = 0;
  std::int64_t stage2_visual_tokens = 0;
  std::int64_t stage2_prompt_text_tokens = 0;
  std::int64_t stage2_completion_tokens = 0;
  std::vector<std::string> stage1_texts;  // one per successful rollout
  std::string stage2_text;
  std::optional<char> predicted_letter;
  char answer_letter = 'A';
  bool correct = false;
  std::vector<std::string> warnings;
  std::vector<std::string> errors;
  double backend_latency_ms = 0.0;

  std::int64_t total_tokens() const;
};

// One JSON object, no trailing newline. Key order is fixed.
std::string record_to_json_line(const EvalRecord& record);

// Per-request seeds. They depend only on ids, never on scheduling.
std::uint64_t rollout_seed(std::uint64_t global_seed, std::string_view sample_id,
                           int rollout_index);
std::uint64_t reasoning_seed(std::uint64_t global_seed, std::string_view sample_id,
                             std::uint64_t variant = 0);

ImageRef base_image(const BenchmarkSample& sample, const PipelineConfig& cfg);

std::vector<ChatMessage> build_ird_prompt(const BenchmarkSample& sample,
                                          const PipelineConfig& cfg);
std::vector<ChatMessage> build_reasoning_prompt(const BenchmarkSample& sample,
                                                std::span<const ImageRef> crops,
                                                const PipelineConfig& cfg);

// Both stage prompts for one sample. shared_image is the first content
// block of each.
struct StagePrompts {
  std::vector<ChatMessage> ird_messages;
  std::vector<ChatMessage> reasoning_messages;
  ImageRef shared_image;
};

StagePrompts build_stage_prompts(const BenchmarkSample& sample,
                                 std::span<const ImageRef> crops,
                                 const PipelineConfig& cfg);

// First image block of the first message, if any.
const ImageRef* leading_image(std::span<const ChatMessage> messages);

struct IrdRun {
  std::vector<IrdHypothesis> hypotheses;  // successful rollouts, by index
  std::vector<std::string> texts;         // raw output per hypothesis
  std::vector<BackendError> errors;
  std::int64_t completion_tokens = 0;
  double latency_ms = 0.0;
};

IrdRun run_ird(const BenchmarkSample& sample, const PipelineConfig& cfg,
               const Backend& backend);

// Parses one stage-1 output according to the configured modality.
IrdHypothesis parse_ird_output(const RawModelText& raw, ImageDims dims,
                               const PipelineConfig& cfg,
                               std::optional<CoordSpace> backend_space);

// Boxes handed to fusion. Points become point_side windows.
std::vector<RolloutBox> hypothesis_boxes(std::span<const IrdHypothesis> hyps,
                                         ImageDims dims, const PipelineConfig& cfg,
                                         std::vector<std::string>& warnings);

struct ExtractedCrops {
  std::vector<ImageRef> crops;
  std::vector<std::string> warnings;
};

ExtractedCrops extract_crops(std::span<const FusedBox> fused,
                             const BenchmarkSample& sample,
                             const PipelineConfig& cfg);

// Full two-stage run. Backend failures are recorded, never thrown.
EvalRecord run_sample(const BenchmarkSample& sample, const PipelineConfig& cfg,
                      const Backend& backend);

// Stage-1 output supplied by the caller instead of the backend (trace
// replay). Treated as a single rollout.
struct ForcedIrdOutput {
  std::string text;
  std::optional<CoordSpace> box_space;
};

EvalRecord run_sample_forced(const BenchmarkSample& sample, const PipelineConfig& cfg,
                             const Backend& backend, const ForcedIrdOutput& forced);

// Stage 2 only, with crops cut at the given regions (ablation sweeps).
// `variant` separates the reasoning seeds of repeated trials on one sample.
EvalRecord run_with_regions(const BenchmarkSample& sample,
                            std::span<const BoundingBox> regions,
                            const PipelineConfig& cfg, const Backend& backend,
                            std::uint64_t variant = 0);

}  // namespace sparc
