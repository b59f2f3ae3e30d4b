#include "sparc/fusion.hpp"

#include <algorithm>
#include <cmath>

namespace sparc {

namespace {

// Incremental mean: identical members leave the fused box bit-exact, so
// duplicates keep IoU 1 with it even at threshold 1.
struct Cluster {
  int count = 0;
  std::vector<int> rollouts;
  BoundingBox fused;

  void add(const RolloutBox& rb) {
    ++count;
    rollouts.push_back(rb.rollout_index);
    const double k = count;
    fused.x1 += (rb.box.x1 - fused.x1) / k;
    fused.y1 += (rb.box.y1 - fused.y1) / k;
    fused.x2 += (rb.box.x2 - fused.x2) / k;
    fused.y2 += (rb.box.y2 - fused.y2) / k;
  }
};

}  // namespace

void FusionConfig::validate() const {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    throw std::invalid_argument("fusion IoU threshold must lie in (0, 1]");
  }
}

std::vector<FusedBox> weighted_boxes_fusion(std::vector<RolloutBox> boxes,
                                            const FusionConfig& cfg) {
  cfg.validate();
  for (const auto& rb : boxes) {
    if (!rb.box.valid()) {
      throw GeometryError("cannot fuse invalid box " + rb.box.to_string());
    }
  }
  std::stable_sort(boxes.begin(), boxes.end(),
                   [](const RolloutBox& a, const RolloutBox& b) {
                     if (a.rollout_index != b.rollout_index) {
                       return a.rollout_index < b.rollout_index;
                     }
                     return a.box_index < b.box_index;
                   });

  std::vector<Cluster> clusters;
  for (const auto& rb : boxes) {
    auto it = std::find_if(clusters.begin(), clusters.end(),
                           [&](const Cluster& c) {
                             return iou(c.fused, rb.box) >= cfg.iou_threshold;
                           });
    if (it == clusters.end()) {
      clusters.emplace_back().add(rb);
    } else {
      it->add(rb);
    }
  }

  std::vector<FusedBox> out;
  out.reserve(clusters.size());
  for (auto& c : clusters) {
    std::sort(c.rollouts.begin(), c.rollouts.end());
    c.rollouts.erase(std::unique(c.rollouts.begin(), c.rollouts.end()),
                     c.rollouts.end());
    out.push_back({c.fused, c.count, std::move(c.rollouts)});
  }
  return out;
}

CropCountStats crop_count_stats(std::span<const CropCountSample> samples) {
  if (samples.empty()) {
    throw std::invalid_argument("crop_count_stats: no records");
  }
  struct Acc {
    double raw = 0.0, fused = 0.0;
    std::size_t n = 0;
  };
  Acc total;
  std::map<std::string, Acc> by_budget;
  for (const auto& s : samples) {
    total.raw += s.raw_count;
    total.fused += s.fused_count;
    ++total.n;
    auto& b = by_budget[s.budget_label];
    b.raw += s.raw_count;
    b.fused += s.fused_count;
    ++b.n;
  }
  auto means = [](const Acc& a) {
    return CropCountMeans{a.raw / static_cast<double>(a.n),
                          a.fused / static_cast<double>(a.n), a.n};
  };
  CropCountStats stats;
  stats.overall = means(total);
  for (const auto& [label, acc] : by_budget) {
    stats.per_resolution[label] = means(acc);
  }
  return stats;
}

}  // namespace sparc
