#pragma once

// Weighted Boxes Fusion over the boxes produced by independent grounding
// rollouts. Grounding models emit no confidences, so every member carries
// weight one and a fused box is the plain mean of its members.

#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparc/geometry.hpp"

namespace sparc {

struct FusionConfig {
  double iou_threshold = 0.5;

  void validate() const;
};

// One box from one rollout. box_index is the position of the box inside
// that rollout's output.
struct RolloutBox {
  int rollout_index = 0;
  int box_index = 0;
  BoundingBox box;
};

struct FusedBox {
  BoundingBox box;
  int member_count = 0;
  std::vector<int> member_rollouts;  // sorted, unique
};

// Greedy clustering in (rollout_index, box_index) order: each box joins the
// first cluster whose current fused box has IoU >= threshold with it, or
// starts a new cluster. Clusters come back in creation order.
std::vector<FusedBox> weighted_boxes_fusion(std::vector<RolloutBox> boxes,
                                            const FusionConfig& cfg = {});

// Per-sample crop counts as consumed by crop_count_stats.
struct CropCountSample {
  std::string budget_label;
  int raw_count = 0;
  int fused_count = 0;
};

struct CropCountMeans {
  double mean_raw = 0.0;
  double mean_fused = 0.0;
  std::size_t samples = 0;
};

struct CropCountStats {
  CropCountMeans overall;
  std::map<std::string, CropCountMeans> per_resolution;
};

// Throws std::invalid_argument on empty input.
CropCountStats crop_count_stats(std::span<const CropCountSample> samples);

}  // namespace sparc
