#pragma once

// Spatial math shared by every stage: box overlap measures, the controlled
// perturbation and expansion protocols used by the ablations, resolution
// budgets and visual-token accounting. Everything here is a pure function.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sparc {

class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Axis-aligned rectangle in original-image pixel space.
struct BoundingBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }
  double half_diagonal() const;

  // Finite coordinates and strictly positive extent on both axes.
  bool valid() const;

  std::string to_string() const;

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

enum class CoordSpace { kPixel, kNorm1000, kPercent };

std::string_view to_string(CoordSpace space);
std::optional<CoordSpace> parse_coord_space(std::string_view text);

struct PointHypothesis {
  double x = 0.0;
  double y = 0.0;
  CoordSpace space = CoordSpace::kPixel;

  bool valid() const;

  friend bool operator==(const PointHypothesis&,
                         const PointHypothesis&) = default;
};

struct ImageDims {
  int width = 1;
  int height = 1;

  int longest_side() const { return width > height ? width : height; }
  bool valid() const { return width >= 1 && height >= 1; }

  friend bool operator==(const ImageDims&, const ImageDims&) = default;
};

enum class ClampMode {
  // Translate the shifted window back inside the image, keeping its size.
  kClampToImage,
  // Let the window leave the image, then intersect it with the image frame.
  kIntersect,
};

struct PerturbationSpec {
  double r = 0.0;
  // Unit vector. Unset means a uniformly random angle drawn from the seed.
  std::optional<std::array<double, 2>> direction;
  ClampMode clamp = ClampMode::kIntersect;
};

// Longest-side cap for the base image; unset means full resolution.
// crop_cap bounds the longest side of extracted crops and follows
// longest_side unless set explicitly.
struct ResolutionBudget {
  std::optional<int> longest_side;
  std::optional<int> crop_cap;

  static ResolutionBudget full() { return {}; }
  static ResolutionBudget capped(int side) { return {side, std::nullopt}; }
  // Accepts "full" or a positive integer.
  static ResolutionBudget parse(std::string_view text);

  std::optional<int> effective_crop_cap() const {
    return crop_cap ? crop_cap : longest_side;
  }
  bool is_full() const { return !longest_side.has_value(); }
  std::string label() const;

  friend bool operator==(const ResolutionBudget&,
                         const ResolutionBudget&) = default;
};

struct TokenCounter {
  int patch_px = 28;
};

BoundingBox image_frame(ImageDims dims);

double intersection_area(const BoundingBox& a, const BoundingBox& b);
std::optional<BoundingBox> intersect(const BoundingBox& a,
                                     const BoundingBox& b);

double iou(const BoundingBox& a, const BoundingBox& b);

// Intersection area over the ground-truth area.
double overlap_ratio(const BoundingBox& crop, const BoundingBox& gt);

// Fraction of gt covered by the union of crops.
double union_coverage(std::span<const BoundingBox> crops,
                      const BoundingBox& gt);

// Same-size window as gt with its center moved by spec.r. Throws
// GeometryError on a degenerate gt, a gt outside the image, r outside
// [0, image diagonal] or a window that ends up entirely outside the image.
BoundingBox perturb(const BoundingBox& gt, const PerturbationSpec& spec,
                    ImageDims dims, std::uint64_t rng_seed);

// Scales each side by `scale` about the center, then clips to the image.
BoundingBox expand(const BoundingBox& box, double scale, ImageDims dims);

// side x side window centered on the point, translated (never shrunk) to fit
// inside the image.
BoundingBox point_to_crop(const PointHypothesis& p, ImageDims dims,
                          int side = 256);

// Downsizes so the longest side is at most `cap`. Never upscales.
ImageDims cap_dims(ImageDims dims, std::optional<int> cap);
ImageDims resize_dims(ImageDims dims, const ResolutionBudget& budget);

std::int64_t visual_tokens(ImageDims dims, const TokenCounter& counter = {});

PointHypothesis to_pixel(const PointHypothesis& p, ImageDims dims);

// Converts from `space` to pixel space and clips to the image.
BoundingBox denormalize(const BoundingBox& box, CoordSpace space,
                        ImageDims dims);

// Smallest integer-aligned box containing `box`, clipped to the image.
// Returns nullopt when nothing of positive area remains.
std::optional<BoundingBox> pixel_align(const BoundingBox& box, ImageDims dims);

}  // namespace sparc
