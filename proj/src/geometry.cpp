#include "sparc/geometry.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

#include "sparc/seeding.hpp"

namespace sparc {

namespace {

void require_valid(const BoundingBox& box, std::string_view what) {
  if (!box.valid()) {
    throw GeometryError(std::string(what) + " is not a valid box: " +
                        box.to_string());
  }
}

void require_valid(ImageDims dims) {
  if (!dims.valid()) {
    throw GeometryError("image dimensions must be positive, got " +
                        std::to_string(dims.width) + "x" +
                        std::to_string(dims.height));
  }
}

// Places a window of length `len` centered at `center` inside [0, limit].
// Windows longer than the limit span the whole axis.
std::pair<double, double> fit_window(double center, double len, double limit) {
  if (len >= limit) return {0.0, limit};
  double lo = center - 0.5 * len;
  double hi = lo + len;
  if (lo < 0.0) {
    lo = 0.0;
    hi = len;
  } else if (hi > limit) {
    hi = limit;
    lo = limit - len;
  }
  return {lo, hi};
}

}  // namespace

double BoundingBox::half_diagonal() const {
  return 0.5 * std::hypot(width(), height());
}

bool BoundingBox::valid() const {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
         std::isfinite(y2) && x1 < x2 && y1 < y2;
}

std::string BoundingBox::to_string() const {
  std::ostringstream os;
  os << "[" << x1 << "," << y1 << "," << x2 << "," << y2 << "]";
  return os.str();
}

std::string_view to_string(CoordSpace space) {
  switch (space) {
    case CoordSpace::kPixel:
      return "pixel";
    case CoordSpace::kNorm1000:
      return "norm_1000";
    case CoordSpace::kPercent:
      return "percent";
  }
  return "pixel";
}

std::optional<CoordSpace> parse_coord_space(std::string_view text) {
  if (text == "pixel") return CoordSpace::kPixel;
  if (text == "norm_1000") return CoordSpace::kNorm1000;
  if (text == "percent") return CoordSpace::kPercent;
  return std::nullopt;
}

bool PointHypothesis::valid() const {
  if (!std::isfinite(x) || !std::isfinite(y)) return false;
  if (space == CoordSpace::kPercent) {
    return x >= 0.0 && x <= 100.0 && y >= 0.0 && y <= 100.0;
  }
  return true;
}

ResolutionBudget ResolutionBudget::parse(std::string_view text) {
  if (text == "full") return full();
  int side = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, side);
  if (ec != std::errc() || ptr != end || side < 1) {
    throw GeometryError("resolution must be 'full' or a positive integer, got '" +
                        std::string(text) + "'");
  }
  return capped(side);
}

std::string ResolutionBudget::label() const {
  return longest_side ? std::to_string(*longest_side) : "full";
}

BoundingBox image_frame(ImageDims dims) {
  return {0.0, 0.0, static_cast<double>(dims.width),
          static_cast<double>(dims.height)};
}

double intersection_area(const BoundingBox& a, const BoundingBox& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

std::optional<BoundingBox> intersect(const BoundingBox& a,
                                     const BoundingBox& b) {
  BoundingBox out{std::max(a.x1, b.x1), std::max(a.y1, b.y1),
                  std::min(a.x2, b.x2), std::min(a.y2, b.y2)};
  if (!out.valid()) return std::nullopt;
  return out;
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  const double inter = intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double overlap_ratio(const BoundingBox& crop, const BoundingBox& gt) {
  return std::clamp(intersection_area(crop, gt) / gt.area(), 0.0, 1.0);
}

double union_coverage(std::span<const BoundingBox> crops,
                      const BoundingBox& gt) {
  std::vector<BoundingBox> clipped;
  std::vector<double> xs{gt.x1, gt.x2};
  std::vector<double> ys{gt.y1, gt.y2};
  for (const auto& c : crops) {
    if (auto part = intersect(c, gt)) {
      clipped.push_back(*part);
      xs.insert(xs.end(), {part->x1, part->x2});
      ys.insert(ys.end(), {part->y1, part->y2});
    }
  }
  if (clipped.empty()) return 0.0;
  if (clipped.size() == 1) return overlap_ratio(clipped.front(), gt);
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  std::sort(ys.begin(), ys.end());
  ys.erase(std::unique(ys.begin(), ys.end()), ys.end());
  double covered = 0.0;
  for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
    const double cx = 0.5 * (xs[i] + xs[i + 1]);
    for (std::size_t j = 0; j + 1 < ys.size(); ++j) {
      const double cy = 0.5 * (ys[j] + ys[j + 1]);
      const bool hit = std::any_of(clipped.begin(), clipped.end(),
                                   [&](const BoundingBox& c) {
                                     return cx > c.x1 && cx < c.x2 &&
                                            cy > c.y1 && cy < c.y2;
                                   });
      if (hit) covered += (xs[i + 1] - xs[i]) * (ys[j + 1] - ys[j]);
    }
  }
  return std::clamp(covered / gt.area(), 0.0, 1.0);
}

BoundingBox perturb(const BoundingBox& gt, const PerturbationSpec& spec,
                    ImageDims dims, std::uint64_t rng_seed) {
  require_valid(gt, "ground-truth box");
  require_valid(dims);
  const BoundingBox frame = image_frame(dims);
  if (gt.x1 < 0.0 || gt.y1 < 0.0 || gt.x2 > frame.x2 || gt.y2 > frame.y2) {
    throw GeometryError("ground-truth box " + gt.to_string() +
                        " lies outside the image");
  }
  const double diagonal = std::hypot(frame.x2, frame.y2);
  if (!std::isfinite(spec.r) || spec.r < 0.0 || spec.r > diagonal) {
    throw GeometryError("shift distance must lie in [0, image diagonal]");
  }
  if (spec.r == 0.0) return gt;

  double dx = 0.0;
  double dy = 0.0;
  if (spec.direction) {
    const auto [ux, uy] = *spec.direction;
    const double norm = std::hypot(ux, uy);
    if (!(std::abs(norm - 1.0) <= 1e-9)) {
      throw GeometryError("perturbation direction must be a unit vector");
    }
    dx = ux;
    dy = uy;
  } else {
    Rng rng(rng_seed);
    const double theta = 2.0 * std::numbers::pi * rng.uniform();
    dx = std::cos(theta);
    dy = std::sin(theta);
  }
  const double cx = gt.center_x() + spec.r * dx;
  const double cy = gt.center_y() + spec.r * dy;
  const double w = gt.width();
  const double h = gt.height();

  if (spec.clamp == ClampMode::kClampToImage) {
    const auto [x1, x2] = fit_window(cx, w, frame.x2);
    const auto [y1, y2] = fit_window(cy, h, frame.y2);
    return {x1, y1, x2, y2};
  }
  const BoundingBox shifted{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w,
                            cy + 0.5 * h};
  auto inside = intersect(shifted, frame);
  if (!inside) {
    throw GeometryError("perturbed window " + shifted.to_string() +
                        " falls entirely outside the image");
  }
  return *inside;
}

BoundingBox expand(const BoundingBox& box, double scale, ImageDims dims) {
  require_valid(box, "box");
  require_valid(dims);
  if (!std::isfinite(scale) || scale < 1.0) {
    throw GeometryError("expansion scale must be >= 1");
  }
  const double hw = 0.5 * box.width() * scale;
  const double hh = 0.5 * box.height() * scale;
  const BoundingBox grown{box.center_x() - hw, box.center_y() - hh,
                          box.center_x() + hw, box.center_y() + hh};
  auto inside = intersect(grown, image_frame(dims));
  if (!inside) {
    throw GeometryError("expanded box " + grown.to_string() +
                        " does not intersect the image");
  }
  return *inside;
}

PointHypothesis to_pixel(const PointHypothesis& p, ImageDims dims) {
  switch (p.space) {
    case CoordSpace::kPixel:
      return p;
    case CoordSpace::kPercent:
      return {p.x * dims.width / 100.0, p.y * dims.height / 100.0,
              CoordSpace::kPixel};
    case CoordSpace::kNorm1000:
      return {p.x * dims.width / 1000.0, p.y * dims.height / 1000.0,
              CoordSpace::kPixel};
  }
  return p;
}

BoundingBox point_to_crop(const PointHypothesis& p, ImageDims dims, int side) {
  require_valid(dims);
  if (side < 1) throw GeometryError("crop side must be positive");
  if (!p.valid()) throw GeometryError("point coordinates are out of range");
  const PointHypothesis px = to_pixel(p, dims);
  if (px.x < 0.0 || px.y < 0.0 || px.x > dims.width || px.y > dims.height) {
    throw GeometryError("point lies outside the image");
  }
  const auto [x1, x2] = fit_window(px.x, side, dims.width);
  const auto [y1, y2] = fit_window(px.y, side, dims.height);
  return {x1, y1, x2, y2};
}

ImageDims cap_dims(ImageDims dims, std::optional<int> cap) {
  require_valid(dims);
  if (!cap) return dims;
  if (*cap < 1) throw GeometryError("resolution cap must be positive");
  const std::int64_t longest = dims.longest_side();
  if (longest <= *cap) return dims;
  // round-half-up of other * cap / longest, in integers
  auto scale = [&](std::int64_t other) {
    const std::int64_t v = (2 * other * *cap + longest) / (2 * longest);
    return static_cast<int>(std::max<std::int64_t>(v, 1));
  };
  if (dims.width >= dims.height) return {*cap, scale(dims.height)};
  return {scale(dims.width), *cap};
}

ImageDims resize_dims(ImageDims dims, const ResolutionBudget& budget) {
  return cap_dims(dims, budget.longest_side);
}

std::int64_t visual_tokens(ImageDims dims, const TokenCounter& counter) {
  require_valid(dims);
  if (counter.patch_px < 1) throw GeometryError("patch size must be >= 1");
  const std::int64_t p = counter.patch_px;
  return ((dims.width + p - 1) / p) * ((dims.height + p - 1) / p);
}

BoundingBox denormalize(const BoundingBox& box, CoordSpace space,
                        ImageDims dims) {
  require_valid(dims);
  double sx = 1.0;
  double sy = 1.0;
  if (space == CoordSpace::kNorm1000) {
    sx = dims.width / 1000.0;
    sy = dims.height / 1000.0;
  } else if (space == CoordSpace::kPercent) {
    sx = dims.width / 100.0;
    sy = dims.height / 100.0;
  }
  const BoundingBox scaled{box.x1 * sx, box.y1 * sy, box.x2 * sx, box.y2 * sy};
  if (!scaled.valid()) {
    throw GeometryError("box " + box.to_string() + " in " +
                        std::string(to_string(space)) +
                        " space is inverted or degenerate");
  }
  auto inside = intersect(scaled, image_frame(dims));
  if (!inside) {
    throw GeometryError("box " + box.to_string() + " lies outside the image");
  }
  return *inside;
}

std::optional<BoundingBox> pixel_align(const BoundingBox& box, ImageDims dims) {
  if (!box.valid()) return std::nullopt;
  BoundingBox aligned{std::floor(box.x1), std::floor(box.y1),
                      std::ceil(box.x2), std::ceil(box.y2)};
  return intersect(aligned, image_frame(dims));
}

}  // namespace sparc
