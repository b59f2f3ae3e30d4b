#include "sparc/pipeline.hpp"

#include <stdexcept>

#include <json.hpp>

#include "sparc/image.hpp"
#include "sparc/prompts.hpp"
#include "sparc/seeding.hpp"

namespace sparc {

namespace {

using nlohmann::ordered_json;

constexpr std::uint64_t kRolloutDomain = 0x1d5;
constexpr std::uint64_t kReasoningDomain = 0x2e7;

EvalRecord blank_record(const BenchmarkSample& sample, const PipelineConfig& cfg) {
  EvalRecord rec;
  rec.sample_id = sample.sample_id;
  rec.budget = cfg.budget.label();
  rec.modality = std::string(to_string(cfg.modality));
  rec.consistency_n = cfg.native ? 0 : cfg.consistency_n;
  rec.answer_letter = sample.answer_letter;
  return rec;
}

std::optional<CoordSpace> box_hint(const PipelineConfig& cfg, const Backend& backend) {
  return cfg.box_space ? cfg.box_space : backend.box_space();
}

std::string grounding_text(const BenchmarkSample& sample, const PipelineConfig& cfg) {
  return render(prompt_set(cfg.resolved_prompt_set()).grounding, sample.question);
}

std::string answering_text(const BenchmarkSample& sample, const PipelineConfig& cfg) {
  return render(prompt_set(cfg.resolved_prompt_set()).answering,
                question_with_choices(sample));
}

// Fuses the hypotheses and records stage-1 bookkeeping on rec.
std::vector<FusedBox> fuse_into(EvalRecord& rec, std::span<const IrdHypothesis> hyps,
                                ImageDims dims, const PipelineConfig& cfg) {
  for (const auto& h : hyps) {
    for (const auto& w : h.parse_warnings) {
      rec.warnings.push_back("rollout " + std::to_string(h.rollout_index) + ": " + w);
    }
  }
  auto boxes = hypothesis_boxes(hyps, dims, cfg, rec.warnings);
  rec.raw_box_count = static_cast<int>(boxes.size());
  rec.fused_boxes = weighted_boxes_fusion(std::move(boxes), cfg.fusion);
  return rec.fused_boxes;
}

std::vector<BoundingBox> regions_of(std::span<const FusedBox> fused) {
  std::vector<BoundingBox> out;
  out.reserve(fused.size());
  for (const auto& f : fused) out.push_back(f.box);
  return out;
}

ExtractedCrops extract_regions(std::span<const BoundingBox> regions,
                               const BenchmarkSample& sample, const PipelineConfig& cfg) {
  ExtractedCrops out;
  const auto cap = cfg.budget.effective_crop_cap();
  for (std::size_t i = 0; i < regions.size(); ++i) {
    auto crop = crop_image(sample.image_path, sample.dims, regions[i], cap);
    if (!crop) {
      out.warnings.push_back("crop " + std::to_string(i) + " " + regions[i].to_string() +
                             " has no area inside the image; skipped");
      continue;
    }
    out.crops.push_back(std::move(*crop));
  }
  return out;
}

void run_stage2(EvalRecord& rec, const BenchmarkSample& sample,
                std::span<const BoundingBox> regions, const PipelineConfig& cfg,
                const Backend& backend, std::uint64_t variant) {
  const ImageRef base = base_image(sample, cfg);
  ExtractedCrops extracted = extract_regions(regions, sample, cfg);
  const auto& crops = extracted.crops;
  for (auto& w : extracted.warnings) rec.warnings.push_back(std::move(w));
  for (const auto& c : crops) {
    rec.crop_regions.push_back(c.region);
    rec.crop_dims.push_back(c.dims);
  }

  rec.stage2_visual_tokens = visual_tokens(base.dims, cfg.patch);
  for (const auto& c : crops) rec.stage2_visual_tokens += visual_tokens(c.dims, cfg.patch);
  rec.stage2_prompt_text_tokens = estimate_text_tokens(answering_text(sample, cfg));

  ChatRequest req;
  req.messages = build_reasoning_prompt(sample, crops, cfg);
  req.temperature = 0.0;
  req.max_tokens = cfg.reasoning_max_tokens;
  req.model_name = cfg.model_name;
  req.seed = reasoning_seed(cfg.global_seed, sample.sample_id, variant);
  req.tag = {sample.sample_id, Stage::kReasoning, 0};

  std::optional<CompletionResult> result;
  try {
    result.emplace(backend.complete(req));
  } catch (const std::exception& e) {
    result.emplace(BackendError{ErrorKind::kInvalidRequest, e.what(), req.tag, 0, 1});
  }
  if (!result->ok()) {
    rec.errors.push_back(result->error().describe());
    return;
  }
  const ChatResponse& resp = result->response();
  rec.stage2_text = resp.text;
  rec.stage2_completion_tokens = resp.completion_tokens;
  rec.backend_latency_ms += resp.latency_ms;
  rec.predicted_letter = extract_choice_letter(resp.text, sample.letters());
  if (!rec.predicted_letter) rec.warnings.push_back("no choice letter in reasoning output");
  rec.correct = rec.predicted_letter == sample.answer_letter;
}

ordered_json box_json(const BoundingBox& b) { return {b.x1, b.y1, b.x2, b.y2}; }

}  // namespace

double PipelineConfig::resolved_ird_temperature() const {
  if (ird_temperature) return *ird_temperature;
  return consistency_n > 1 ? kConsistencyTemperature : 0.0;
}

std::string PipelineConfig::resolved_prompt_set() const {
  return prompt_set.empty() ? std::string(default_prompt_set(modality)) : prompt_set;
}

void PipelineConfig::validate() const {
  if (consistency_n < 1) throw std::invalid_argument("consistency_n must be >= 1");
  if (ird_temperature && !(*ird_temperature >= 0.0)) {
    throw std::invalid_argument("temperature must be >= 0");
  }
  if (point_side < 1) throw std::invalid_argument("point_side must be positive");
  if (patch.patch_px < 1) throw std::invalid_argument("patch size must be positive");
  if (max_in_flight < 1) throw std::invalid_argument("max_in_flight must be >= 1");
  if (ird_max_tokens < 1 || reasoning_max_tokens < 1) {
    throw std::invalid_argument("max_tokens must be >= 1");
  }
  if (budget.longest_side && *budget.longest_side < 1) {
    throw std::invalid_argument("resolution must be positive");
  }
  if (budget.crop_cap && *budget.crop_cap < 1) {
    throw std::invalid_argument("crop cap must be positive");
  }
  fusion.validate();
  const PromptSet& set = sparc::prompt_set(resolved_prompt_set());
  if (set.modality != modality) {
    throw std::invalid_argument("prompt set '" + std::string(set.id) +
                                "' does not match modality " +
                                std::string(to_string(modality)));
  }
}

std::int64_t EvalRecord::total_tokens() const {
  return stage1_visual_tokens + stage1_prompt_text_tokens + stage1_completion_tokens +
         stage2_visual_tokens + stage2_prompt_text_tokens + stage2_completion_tokens;
}

std::string record_to_json_line(const EvalRecord& r) {
  ordered_json fused = ordered_json::array();
  for (const auto& f : r.fused_boxes) {
    fused.push_back({{"box", box_json(f.box)},
                     {"member_count", f.member_count},
                     {"member_rollouts", f.member_rollouts}});
  }
  ordered_json regions = ordered_json::array();
  for (const auto& b : r.crop_regions) regions.push_back(box_json(b));
  ordered_json dims = ordered_json::array();
  for (const auto& d : r.crop_dims) dims.push_back({d.width, d.height});

  ordered_json doc;
  doc["sample_id"] = r.sample_id;
  doc["budget"] = r.budget;
  doc["modality"] = r.modality;
  doc["consistency_n"] = r.consistency_n;
  doc["raw_box_count"] = r.raw_box_count;
  doc["fused_count"] = r.fused_boxes.size();
  doc["fused_boxes"] = std::move(fused);
  doc["crop_regions"] = std::move(regions);
  doc["crops_dims"] = std::move(dims);
  doc["stage1_visual_tokens"] = r.stage1_visual_tokens;
  doc["stage1_prompt_text_tokens"] = r.stage1_prompt_text_tokens;
  doc["stage1_completion_tokens"] = r.stage1_completion_tokens;
  doc["stage2_visual_tokens"] = r.stage2_visual_tokens;
  doc["stage2_prompt_text_tokens"] = r.stage2_prompt_text_tokens;
  doc["stage2_completion_tokens"] = r.stage2_completion_tokens;
  doc["total_tokens"] = r.total_tokens();
  doc["stage1_text"] = r.stage1_texts;
  doc["stage2_text"] = r.stage2_text;
  doc["predicted_letter"] =
      r.predicted_letter ? ordered_json(std::string(1, *r.predicted_letter)) : ordered_json();
  doc["answer_letter"] = std::string(1, r.answer_letter);
  doc["correct"] = r.correct;
  doc["warnings"] = r.warnings;
  doc["errors"] = r.errors;
  doc["timing"] = {{"backend_latency_ms", r.backend_latency_ms}};
  return doc.dump(-1, ' ', false, ordered_json::error_handler_t::replace);
}

std::uint64_t rollout_seed(std::uint64_t global_seed, std::string_view sample_id,
                           int rollout_index) {
  return mix_seed({global_seed, hash_string(sample_id), kRolloutDomain,
                   static_cast<std::uint64_t>(rollout_index)});
}

std::uint64_t reasoning_seed(std::uint64_t global_seed, std::string_view sample_id,
                             std::uint64_t variant) {
  return mix_seed({global_seed, hash_string(sample_id), kReasoningDomain, variant});
}

ImageRef base_image(const BenchmarkSample& sample, const PipelineConfig& cfg) {
  return whole_image(sample.image_path, sample.dims, cfg.budget);
}

std::vector<ChatMessage> build_ird_prompt(const BenchmarkSample& sample,
                                          const PipelineConfig& cfg) {
  if (sample.question.empty()) throw std::invalid_argument("question must be non-empty");
  ChatMessage msg;
  msg.content.emplace_back(base_image(sample, cfg));
  msg.content.emplace_back(TextBlock{grounding_text(sample, cfg)});
  return {std::move(msg)};
}

std::vector<ChatMessage> build_reasoning_prompt(const BenchmarkSample& sample,
                                                std::span<const ImageRef> crops,
                                                const PipelineConfig& cfg) {
  if (sample.question.empty()) throw std::invalid_argument("question must be non-empty");
  ChatMessage msg;
  msg.content.emplace_back(base_image(sample, cfg));
  for (const auto& c : crops) msg.content.emplace_back(c);
  msg.content.emplace_back(TextBlock{answering_text(sample, cfg)});
  return {std::move(msg)};
}

StagePrompts build_stage_prompts(const BenchmarkSample& sample,
                                 std::span<const ImageRef> crops,
                                 const PipelineConfig& cfg) {
  return {build_ird_prompt(sample, cfg), build_reasoning_prompt(sample, crops, cfg),
          base_image(sample, cfg)};
}

const ImageRef* leading_image(std::span<const ChatMessage> messages) {
  if (messages.empty()) return nullptr;
  auto images = image_blocks(messages.front());
  return images.empty() ? nullptr : images.front();
}

IrdHypothesis parse_ird_output(const RawModelText& raw, ImageDims dims,
                               const PipelineConfig& cfg,
                               std::optional<CoordSpace> backend_space) {
  if (cfg.modality == Modality::kPoint) return parse_points(raw, dims, cfg.point_space);
  return parse_boxes(raw, dims, cfg.box_space ? cfg.box_space : backend_space);
}

IrdRun run_ird(const BenchmarkSample& sample, const PipelineConfig& cfg,
               const Backend& backend) {
  const auto messages = build_ird_prompt(sample, cfg);
  std::vector<ChatRequest> reqs(static_cast<std::size_t>(cfg.consistency_n));
  for (int k = 0; k < cfg.consistency_n; ++k) {
    ChatRequest& req = reqs[static_cast<std::size_t>(k)];
    req.messages = messages;
    req.temperature = cfg.resolved_ird_temperature();
    req.max_tokens = cfg.ird_max_tokens;
    req.model_name = cfg.model_name;
    req.seed = rollout_seed(cfg.global_seed, sample.sample_id, k);
    req.tag = {sample.sample_id, Stage::kIrd, k};
  }
  const auto results = batched_complete(backend, reqs, cfg.max_in_flight);
  const auto hint = box_hint(cfg, backend);

  IrdRun run;
  for (int k = 0; k < cfg.consistency_n; ++k) {
    const CompletionResult& res = results[static_cast<std::size_t>(k)];
    if (!res.ok()) {
      run.errors.push_back(res.error());
      continue;
    }
    const ChatResponse& resp = res.response();
    run.completion_tokens += resp.completion_tokens;
    run.latency_ms += resp.latency_ms;
    run.texts.push_back(resp.text);
    run.hypotheses.push_back(
        parse_ird_output({resp.text, Stage::kIrd, k}, sample.dims, cfg, hint));
  }
  return run;
}

std::vector<RolloutBox> hypothesis_boxes(std::span<const IrdHypothesis> hyps,
                                         ImageDims dims, const PipelineConfig& cfg,
                                         std::vector<std::string>& warnings) {
  std::vector<RolloutBox> out;
  for (const auto& h : hyps) {
    int index = 0;
    if (cfg.modality == Modality::kPoint) {
      for (const auto& p : h.points) {
        try {
          out.push_back({h.rollout_index, index++, point_to_crop(p, dims, cfg.point_side)});
        } catch (const GeometryError& e) {
          warnings.push_back("rollout " + std::to_string(h.rollout_index) +
                             ": point skipped: " + e.what());
        }
      }
    } else {
      for (const auto& b : h.boxes) out.push_back({h.rollout_index, index++, b});
    }
  }
  return out;
}

ExtractedCrops extract_crops(std::span<const FusedBox> fused,
                             const BenchmarkSample& sample,
                             const PipelineConfig& cfg) {
  const auto regions = regions_of(fused);
  return extract_regions(regions, sample, cfg);
}

EvalRecord run_sample(const BenchmarkSample& sample, const PipelineConfig& cfg,
                      const Backend& backend) {
  EvalRecord rec = blank_record(sample, cfg);
  std::vector<FusedBox> fused;
  if (!cfg.native) {
    rec.stage1_visual_tokens = visual_tokens(base_image(sample, cfg).dims, cfg.patch);
    rec.stage1_prompt_text_tokens = estimate_text_tokens(grounding_text(sample, cfg));
    IrdRun ird = run_ird(sample, cfg, backend);
    for (const auto& e : ird.errors) rec.errors.push_back(e.describe());
    rec.stage1_texts = std::move(ird.texts);
    rec.stage1_completion_tokens = ird.completion_tokens;
    rec.backend_latency_ms += ird.latency_ms;
    fused = fuse_into(rec, ird.hypotheses, sample.dims, cfg);
  }
  const auto regions = regions_of(fused);
  run_stage2(rec, sample, regions, cfg, backend, 0);
  return rec;
}

EvalRecord run_sample_forced(const BenchmarkSample& sample, const PipelineConfig& cfg,
                             const Backend& backend, const ForcedIrdOutput& forced) {
  EvalRecord rec = blank_record(sample, cfg);
  rec.consistency_n = 1;
  rec.stage1_visual_tokens = visual_tokens(base_image(sample, cfg).dims, cfg.patch);
  rec.stage1_prompt_text_tokens = estimate_text_tokens(grounding_text(sample, cfg));
  rec.stage1_completion_tokens = estimate_text_tokens(forced.text);
  rec.stage1_texts = {forced.text};
  PipelineConfig parse_cfg = cfg;
  if (forced.box_space) parse_cfg.box_space = forced.box_space;
  const std::vector<IrdHypothesis> hyps = {parse_ird_output(
      {forced.text, Stage::kIrd, 0}, sample.dims, parse_cfg, box_hint(cfg, backend))};
  const auto fused = fuse_into(rec, hyps, sample.dims, cfg);
  const auto regions = regions_of(fused);
  run_stage2(rec, sample, regions, cfg, backend, 0);
  return rec;
}

EvalRecord run_with_regions(const BenchmarkSample& sample,
                            std::span<const BoundingBox> regions,
                            const PipelineConfig& cfg, const Backend& backend,
                            std::uint64_t variant) {
  EvalRecord rec = blank_record(sample, cfg);
  rec.consistency_n = 0;
  run_stage2(rec, sample, regions, cfg, backend, variant);
  return rec;
}

}  // namespace sparc
