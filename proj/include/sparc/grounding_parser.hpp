#pragma once

// Turns raw model text into typed perception hypotheses and reasoning output
// into an answer letter. Parsing is lenient: malformed pieces are skipped and
// reported as warnings, and no input makes these functions throw (apart from
// calling them with the wrong stage).

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sparc/geometry.hpp"

namespace sparc {

enum class Stage { kIrd, kReasoning };

std::string_view to_string(Stage stage);

// Grounding output family: JSON boxes or point tags.
enum class Modality { kBox, kPoint };

std::string_view to_string(Modality m);
std::optional<Modality> parse_modality(std::string_view text);

struct RawModelText {
  std::string text;
  Stage stage = Stage::kIrd;
  int rollout_index = 0;
};

struct IrdHypothesis {
  int rollout_index = 0;
  // Pixel space, clipped to the image.
  std::vector<BoundingBox> boxes;
  std::vector<PointHypothesis> points;
  std::vector<std::string> labels;
  // The same geometry as it appeared in the model output, before conversion.
  // Kept so that traces can be re-serialized in the model's own schema.
  std::vector<BoundingBox> raw_boxes;
  std::vector<PointHypothesis> raw_points;
  std::optional<CoordSpace> box_space;
  std::vector<std::string> parse_warnings;

  bool empty() const { return boxes.empty() && points.empty(); }
};

// Reads the first JSON array (fenced or bare) of box objects. Accepted keys
// are bbox_2d, bbox and box; bare [x1,y1,x2,y2] arrays are accepted too.
// Without a hint the coordinate space is inferred: any coordinate above the
// longest image side, or all coordinates <= 1000 on an image larger than
// 1000 px, means norm_1000; otherwise pixel.
IrdHypothesis parse_boxes(const RawModelText& raw, ImageDims dims,
                          std::optional<CoordSpace> hint = std::nullopt);

// Reads <point x=".." y=".."> and <points x1=".." y1=".." ...> tags.
IrdHypothesis parse_points(const RawModelText& raw, ImageDims dims,
                           CoordSpace point_space = CoordSpace::kPercent);

// First standalone valid letter, case-insensitive, preferring an explicit
// "answer is X" / "Answer: X" phrase, then a parenthesized "(X)".
// valid_letters holds uppercase letters, e.g. "ABCD".
std::optional<char> extract_choice_letter(std::string_view text,
                                          std::string_view valid_letters);

// Emit the schemas accepted above. Numbers are written with round-trip
// precision, so parsing the output with the same space hint reproduces the
// input exactly.
std::string serialize_boxes(std::span<const BoundingBox> boxes,
                            std::span<const std::string> labels);
std::string serialize_points(std::span<const PointHypothesis> points,
                             std::span<const std::string> labels);

}  // namespace sparc
