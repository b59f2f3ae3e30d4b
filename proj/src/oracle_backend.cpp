#include "sparc/oracle_backend.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sparc/seeding.hpp"

namespace sparc {

namespace {

int visual_prompt_tokens(const ChatRequest& req) {
  std::int64_t total = 0;
  for (const auto& msg : req.messages) {
    for (const auto* img : image_blocks(msg)) total += visual_tokens(img->dims);
    total += estimate_text_tokens(joined_text(msg));
  }
  return static_cast<int>(total);
}

// Longest side of `target` measured in the delivered pixels of `img`.
double delivered_px(const BoundingBox& target, const ImageRef& img) {
  auto part = intersect(target, img.region);
  if (!part) return 0.0;
  const double sx = img.dims.width / img.region.width();
  const double sy = img.dims.height / img.region.height();
  return std::max(part->width() * sx, part->height() * sy);
}

}  // namespace

double AnswerCurve::quality(double coverage) const {
  if (coverage >= b) return 1.0;
  if (coverage <= a) return 0.0;
  return (coverage - a) / (b - a);
}

double AnswerCurve::probability(double coverage) const {
  return p_floor + (p_ceil - p_floor) * quality(coverage);
}

void AnswerCurve::validate() const {
  if (!(0.0 <= p_floor && p_floor <= p_ceil && p_ceil <= 1.0)) {
    throw std::invalid_argument("answer curve needs 0 <= p_floor <= p_ceil <= 1");
  }
  if (!(0.0 <= a && a < b && b <= 1.0)) {
    throw std::invalid_argument("answer curve needs 0 <= a < b <= 1");
  }
}

void OracleConfig::validate() const {
  curve.validate();
  if (!(sigma_frac >= 0.0)) throw std::invalid_argument("sigma_frac must be >= 0");
  if (!(reference_temperature > 0.0)) {
    throw std::invalid_argument("reference_temperature must be > 0");
  }
  if (!(fidelity_px >= 0.0)) throw std::invalid_argument("fidelity_px must be >= 0");
}

OracleBackend::OracleBackend(OracleConfig cfg, std::vector<OracleTruth> truths)
    : cfg_(cfg) {
  cfg_.validate();
  for (auto& t : truths) {
    if (t.letters.empty()) {
      throw std::invalid_argument("oracle truth '" + t.sample_id + "' has no choices");
    }
    std::string id = t.sample_id;
    truths_.insert_or_assign(std::move(id), std::move(t));
  }
}

CompletionResult OracleBackend::complete(const ChatRequest& req) const {
  try {
    req.validate();
  } catch (const std::exception& e) {
    return BackendError{ErrorKind::kInvalidRequest, e.what(), req.tag};
  }
  auto it = truths_.find(req.tag.sample_id);
  if (it == truths_.end()) {
    return BackendError{ErrorKind::kInvalidRequest,
                        "oracle has no ground truth for this sample", req.tag};
  }
  ChatResponse resp = req.tag.stage == Stage::kIrd ? localize(req, it->second)
                                                   : answer(req, it->second);
  resp.prompt_tokens = visual_prompt_tokens(req);
  resp.completion_tokens = estimate_text_tokens(resp.text);
  return resp;
}

ChatResponse OracleBackend::localize(const ChatRequest& req,
                                     const OracleTruth& truth) const {
  Rng rng(mix_seed({cfg_.seed, req.seed.value_or(0), 0x1d}));
  const double temp_scale = req.temperature / cfg_.reference_temperature;
  const BoundingBox frame = image_frame(truth.dims);

  std::vector<BoundingBox> boxes;
  std::vector<PointHypothesis> points;
  for (const auto& gt : truth.gt_boxes) {
    const double sigma = cfg_.sigma_frac * gt.half_diagonal() * temp_scale;
    const double dx = sigma * rng.normal();
    const double dy = sigma * rng.normal();
    if (cfg_.modality == Modality::kBox) {
      const BoundingBox moved{gt.x1 + dx, gt.y1 + dy, gt.x2 + dx, gt.y2 + dy};
      if (auto inside = intersect(moved, frame)) boxes.push_back(*inside);
    } else {
      const double cx = std::clamp(gt.center_x() + dx, 0.0, frame.x2);
      const double cy = std::clamp(gt.center_y() + dy, 0.0, frame.y2);
      points.push_back({cx * 100.0 / truth.dims.width,
                        cy * 100.0 / truth.dims.height, CoordSpace::kPercent});
    }
  }
  ChatResponse resp;
  if (cfg_.modality == Modality::kBox) {
    if (boxes.empty()) {
      resp.text = "no objects found";
    } else {
      const std::vector<std::string> labels(boxes.size(), "target");
      resp.text = "```json\n" + serialize_boxes(boxes, labels) + "\n```";
    }
  } else {
    const std::vector<std::string> labels{"target"};
    resp.text = points.empty() ? "no objects found"
                               : serialize_points(points, labels);
  }
  return resp;
}

double OracleBackend::evidence_quality(const OracleTruth& truth,
                                       const ImageRef& base,
                                       std::span<const ImageRef* const> crops) const {
  if (truth.gt_boxes.empty()) return 0.0;
  std::vector<BoundingBox> regions;
  regions.reserve(crops.size());
  for (const auto* c : crops) regions.push_back(c->region);

  double total = 0.0;
  for (const auto& gt : truth.gt_boxes) {
    double q = cfg_.curve.quality(union_coverage(regions, gt));
    if (cfg_.fidelity_px > 0.0) {
      double best_px = 0.0;
      for (const auto* c : crops) best_px = std::max(best_px, delivered_px(gt, *c));
      q *= std::min(1.0, best_px / cfg_.fidelity_px);
      q = std::max(q, std::min(1.0, delivered_px(gt, base) / cfg_.fidelity_px));
    }
    total += q;
  }
  return total / static_cast<double>(truth.gt_boxes.size());
}

ChatResponse OracleBackend::answer(const ChatRequest& req,
                                   const OracleTruth& truth) const {
  Rng rng(mix_seed({cfg_.seed, req.seed.value_or(0), 0x2a}));
  std::vector<const ImageRef*> images;
  for (const auto& msg : req.messages) {
    for (const auto* img : image_blocks(msg)) images.push_back(img);
  }
  double quality = 0.0;
  if (!images.empty()) {
    quality = evidence_quality(
        truth, *images.front(),
        std::span<const ImageRef* const>(images).subspan(1));
  }
  const double p = cfg_.curve.p_floor +
                   (cfg_.curve.p_ceil - cfg_.curve.p_floor) * quality;
  ChatResponse resp;
  if (rng.uniform() < p) {
    resp.text = std::string(1, truth.answer);
    return resp;
  }
  std::string wrong;
  for (char c : truth.letters) {
    if (c != truth.answer) wrong += c;
  }
  if (wrong.empty()) {
    resp.text = "I cannot tell from the image.";
  } else {
    resp.text = std::string(1, wrong[rng.below(wrong.size())]);
  }
  return resp;
}

}  // namespace sparc
