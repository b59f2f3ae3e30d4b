#include "sparc/grounding_parser.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <map>
#include <stdexcept>

#include <json.hpp>

namespace sparc {

namespace {

using nlohmann::json;

constexpr std::string_view kFence = "```";

void require_stage(const RawModelText& raw, Stage expected) {
  if (raw.stage != expected) {
    throw std::invalid_argument("parser called with text from the " +
                                std::string(to_string(raw.stage)) + " stage");
  }
}

// Body of the first ``` fenced block, without the optional language tag.
std::optional<std::string_view> first_fenced_block(std::string_view text) {
  const auto open = text.find(kFence);
  if (open == std::string_view::npos) return std::nullopt;
  auto body_start = open + kFence.size();
  const auto newline = text.find('\n', body_start);
  const auto close = text.find(kFence, body_start);
  if (newline != std::string_view::npos &&
      (close == std::string_view::npos || newline < close)) {
    body_start = newline + 1;
  }
  if (close == std::string_view::npos || close < body_start) {
    return text.substr(body_start);
  }
  return text.substr(body_start, close - body_start);
}

// End (exclusive) of the bracketed value opening at text[start], honoring
// JSON string literals. npos when unbalanced.
std::size_t balanced_end(std::string_view text, std::size_t start) {
  std::vector<char> stack;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = start; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    switch (c) {
      case '"':
        in_string = true;
        break;
      case '[':
      case '{':
        stack.push_back(c);
        break;
      case ']':
      case '}': {
        const char want = c == ']' ? '[' : '{';
        if (stack.empty() || stack.back() != want) return std::string_view::npos;
        stack.pop_back();
        if (stack.empty()) return i + 1;
        break;
      }
      default:
        break;
    }
  }
  return std::string_view::npos;
}

// First parsable JSON value opening with `open` in the text.
std::optional<json> first_json(std::string_view text, char open) {
  for (auto pos = text.find(open); pos != std::string_view::npos;
       pos = text.find(open, pos + 1)) {
    const auto end = balanced_end(text, pos);
    if (end == std::string_view::npos) continue;
    json value = json::parse(text.begin() + pos, text.begin() + end, nullptr,
                             /*allow_exceptions=*/false);
    if (!value.is_discarded()) return value;
  }
  return std::nullopt;
}

std::optional<BoundingBox> as_box(const json& value) {
  if (!value.is_array() || value.size() != 4) return std::nullopt;
  double c[4];
  for (std::size_t i = 0; i < 4; ++i) {
    if (!value[i].is_number()) return std::nullopt;
    c[i] = value[i].get<double>();
    if (!std::isfinite(c[i])) return std::nullopt;
  }
  return BoundingBox{c[0], c[1], c[2], c[3]};
}

struct RawEntry {
  BoundingBox box;
  std::string label;
};

void collect_entry(const json& item, std::size_t index,
                   std::vector<RawEntry>& out,
                   std::vector<std::string>& warnings) {
  if (item.is_object()) {
    for (const char* key : {"bbox_2d", "bbox", "box"}) {
      auto it = item.find(key);
      if (it == item.end()) continue;
      if (auto box = as_box(*it)) {
        std::string label;
        if (auto l = item.find("label"); l != item.end()) {
          label = l->is_string() ? l->get<std::string>()
                                 : l->dump(-1, ' ', false,
                                           json::error_handler_t::replace);
        }
        out.push_back({*box, std::move(label)});
      } else {
        warnings.push_back("entry " + std::to_string(index) + ": '" + key +
                           "' is not an array of 4 numbers");
      }
      return;
    }
    warnings.push_back("entry " + std::to_string(index) +
                       ": no bbox_2d/bbox/box key");
    return;
  }
  if (auto box = as_box(item)) {
    out.push_back({*box, {}});
    return;
  }
  warnings.push_back("entry " + std::to_string(index) +
                     ": not a box object or coordinate array");
}

std::optional<std::vector<RawEntry>> extract_entries(
    std::string_view text, std::vector<std::string>& warnings) {
  auto from = [&](std::string_view scope) -> std::optional<std::vector<RawEntry>> {
    const auto bracket = scope.find('[');
    const auto brace = scope.find('{');
    // A lone object ahead of any array, e.g. {"bbox_2d": [...]}.
    if (brace != std::string_view::npos &&
        (bracket == std::string_view::npos || brace < bracket)) {
      if (auto obj = first_json(scope.substr(brace), '{');
          obj && obj->is_object()) {
        std::vector<RawEntry> entries;
        std::vector<std::string> local;
        collect_entry(*obj, 0, entries, local);
        if (!entries.empty()) return entries;
      }
    }
    auto arr = first_json(scope, '[');
    if (!arr || !arr->is_array()) return std::nullopt;
    std::vector<RawEntry> entries;
    if (auto single = as_box(*arr)) {
      entries.push_back({*single, {}});
      return entries;
    }
    for (std::size_t i = 0; i < arr->size(); ++i) {
      collect_entry((*arr)[i], i, entries, warnings);
    }
    return entries;
  };
  if (auto fenced = first_fenced_block(text)) {
    if (auto entries = from(*fenced)) return entries;
  }
  return from(text);
}

CoordSpace infer_space(std::span<const RawEntry> entries, ImageDims dims) {
  double max_coord = 0.0;
  for (const auto& e : entries) {
    max_coord = std::max({max_coord, e.box.x1, e.box.y1, e.box.x2, e.box.y2});
  }
  const int longest = dims.longest_side();
  if (max_coord > longest) return CoordSpace::kNorm1000;
  if (max_coord <= 1000.0 && longest > 1000) return CoordSpace::kNorm1000;
  return CoordSpace::kPixel;
}

// --- point tags ------------------------------------------------------------

bool ieq(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) ==
                  std::tolower(static_cast<unsigned char>(y));
         });
}

bool is_name_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
}

struct Tag {
  std::string name;
  std::map<std::string, std::string> attrs;
  std::string body;
  bool well_formed = true;
};

std::string unescape(std::string_view s) {
  static constexpr std::pair<std::string_view, char> kEntities[] = {
      {"&quot;", '"'}, {"&apos;", '\''}, {"&lt;", '<'}, {"&gt;", '>'}, {"&amp;", '&'}};
  std::string out;
  for (std::size_t i = 0; i < s.size();) {
    bool matched = false;
    if (s[i] == '&') {
      for (const auto& [name, c] : kEntities) {
        if (s.substr(i, name.size()) == name) {
          out += c;
          i += name.size();
          matched = true;
          break;
        }
      }
    }
    if (!matched) out += s[i++];
  }
  return out;
}

// Parses the tag starting at text[pos] == '<'. Advances pos past it.
Tag read_tag(std::string_view text, std::size_t& pos) {
  Tag tag;
  std::size_t i = pos + 1;
  while (i < text.size() && is_name_char(text[i])) tag.name += text[i++];
  for (;;) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) {
      ++i;
    }
    if (i >= text.size()) {
      tag.well_formed = false;
      break;
    }
    if (text[i] == '>') {
      ++i;
      break;
    }
    if (text[i] == '/' && i + 1 < text.size() && text[i + 1] == '>') {
      i += 2;
      pos = i;
      return tag;
    }
    std::string key;
    while (i < text.size() && is_name_char(text[i])) key += text[i++];
    if (key.empty() || i >= text.size() || text[i] != '=') {
      tag.well_formed = false;
      break;
    }
    ++i;
    if (i >= text.size() || (text[i] != '"' && text[i] != '\'')) {
      tag.well_formed = false;
      break;
    }
    const char quote = text[i++];
    const auto close = text.find(quote, i);
    if (close == std::string_view::npos) {
      tag.well_formed = false;
      break;
    }
    tag.attrs[key] = unescape(text.substr(i, close - i));
    i = close + 1;
  }
  // The body runs to the next '<'; it only counts if that is our closing
  // tag, so an unclosed tag never swallows the one after it.
  if (tag.well_formed) {
    const auto end = text.find('<', i);
    const std::string closing = "</" + tag.name;
    if (end != std::string_view::npos && end + closing.size() <= text.size() &&
        std::equal(closing.begin(), closing.end(), text.begin() + end,
                   [](char a, char b) {
                     return std::tolower(static_cast<unsigned char>(a)) ==
                            std::tolower(static_cast<unsigned char>(b));
                   })) {
      tag.body = unescape(text.substr(i, end - i));
      const auto gt = text.find('>', end);
      i = gt == std::string_view::npos ? text.size() : gt + 1;
    }
  }
  pos = std::max(i, pos + 1);
  return tag;
}

std::optional<double> to_number(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  while (first < last && std::isspace(static_cast<unsigned char>(*first))) ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr == first || !std::isfinite(v)) return std::nullopt;
  while (ptr < last && std::isspace(static_cast<unsigned char>(*ptr))) ++ptr;
  if (ptr != last) return std::nullopt;
  return v;
}

std::string json_number(double v) { return json(v).dump(); }

std::string attr_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '&') {
      out += "&amp;";
    } else if (c == '"') {
      out += "&quot;";
    } else if (c == '<') {
      out += "&lt;";
    } else if (c == '>') {
      out += "&gt;";
    } else {
      out += c;
    }
  }
  return out;
}

bool standalone(std::string_view text, std::size_t i) {
  auto alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)); };
  if (i > 0 && alnum(text[i - 1])) return false;
  if (i + 1 < text.size() && alnum(text[i + 1])) return false;
  return true;
}

std::optional<char> valid_at(std::string_view text, std::size_t i,
                             std::string_view letters) {
  if (i >= text.size() || !std::isalpha(static_cast<unsigned char>(text[i]))) {
    return std::nullopt;
  }
  const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(text[i])));
  if (letters.find(up) == std::string_view::npos) return std::nullopt;
  if (!standalone(text, i)) return std::nullopt;
  return up;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::string_view to_string(Stage stage) {
  return stage == Stage::kIrd ? "ird" : "reasoning";
}

std::string_view to_string(Modality m) {
  return m == Modality::kBox ? "box" : "point";
}

std::optional<Modality> parse_modality(std::string_view text) {
  if (text == "box") return Modality::kBox;
  if (text == "point") return Modality::kPoint;
  return std::nullopt;
}

IrdHypothesis parse_boxes(const RawModelText& raw, ImageDims dims,
                          std::optional<CoordSpace> hint) {
  require_stage(raw, Stage::kIrd);
  IrdHypothesis hyp;
  hyp.rollout_index = raw.rollout_index;
  auto entries = extract_entries(raw.text, hyp.parse_warnings);
  if (!entries) {
    hyp.parse_warnings.push_back("no parsable box array in model output");
    return hyp;
  }
  if (entries->empty()) {
    hyp.parse_warnings.push_back("model output contained no usable boxes");
    return hyp;
  }
  const CoordSpace space = hint ? *hint : infer_space(*entries, dims);
  hyp.box_space = space;
  for (std::size_t i = 0; i < entries->size(); ++i) {
    const auto& e = (*entries)[i];
    try {
      hyp.boxes.push_back(denormalize(e.box, space, dims));
      hyp.raw_boxes.push_back(e.box);
      hyp.labels.push_back(e.label);
    } catch (const GeometryError& err) {
      hyp.parse_warnings.push_back("box " + std::to_string(i) +
                                   " skipped: " + err.what());
    }
  }
  return hyp;
}

IrdHypothesis parse_points(const RawModelText& raw, ImageDims dims,
                           CoordSpace point_space) {
  require_stage(raw, Stage::kIrd);
  IrdHypothesis hyp;
  hyp.rollout_index = raw.rollout_index;
  const std::string_view text = raw.text;

  auto add_point = [&](const std::string* xs, const std::string* ys,
                       const std::string& label, const std::string& where) {
    if (!xs || !ys) {
      hyp.parse_warnings.push_back(where + ": missing coordinate attribute");
      return;
    }
    const auto x = to_number(*xs);
    const auto y = to_number(*ys);
    if (!x || !y) {
      hyp.parse_warnings.push_back(where + ": non-numeric coordinate");
      return;
    }
    const PointHypothesis p{*x, *y, point_space};
    if (!p.valid()) {
      hyp.parse_warnings.push_back(where + ": coordinate out of range");
      return;
    }
    const PointHypothesis px = to_pixel(p, dims);
    if (px.x < 0.0 || px.y < 0.0 || px.x > dims.width || px.y > dims.height) {
      hyp.parse_warnings.push_back(where + ": point outside the image");
      return;
    }
    hyp.points.push_back(px);
    hyp.raw_points.push_back(p);
    hyp.labels.push_back(label);
  };

  std::size_t tag_index = 0;
  for (auto pos = text.find('<'); pos != std::string_view::npos;
       pos = text.find('<', pos)) {
    const std::size_t start = pos;
    Tag tag = read_tag(text, pos);
    const bool single = ieq(tag.name, "point");
    const bool multi = ieq(tag.name, "points");
    if (!single && !multi) {
      pos = start + 1;
      continue;
    }
    const std::string where = "tag " + std::to_string(tag_index++);
    if (!tag.well_formed) {
      hyp.parse_warnings.push_back(where + ": malformed tag");
      continue;
    }
    auto attr = [&](const std::string& key) -> const std::string* {
      auto it = tag.attrs.find(key);
      return it == tag.attrs.end() ? nullptr : &it->second;
    };
    std::string label = tag.body;
    if (const auto* alt = attr("alt"); alt && label.empty()) label = *alt;
    if (single) {
      add_point(attr("x"), attr("y"), label, where);
      continue;
    }
    int found = 0;
    for (int k = 1;; ++k) {
      const auto* xs = attr("x" + std::to_string(k));
      const auto* ys = attr("y" + std::to_string(k));
      if (!xs && !ys) break;
      add_point(xs, ys, label, where + " point " + std::to_string(k));
      ++found;
    }
    if (found == 0) hyp.parse_warnings.push_back(where + ": no x1/y1 attributes");
  }
  if (hyp.points.empty()) {
    hyp.parse_warnings.push_back("no usable point tags in model output");
  }
  return hyp;
}

std::optional<char> extract_choice_letter(std::string_view text,
                                          std::string_view valid_letters) {
  if (valid_letters.empty()) return std::nullopt;
  const std::string low = lower(text);

  // "answer is X", "answer: X", "answer is (X)"
  for (auto pos = low.find("answer"); pos != std::string::npos;
       pos = low.find("answer", pos + 1)) {
    std::size_t i = pos + 6;
    auto skip = [&] {
      while (i < low.size() && (std::isspace(static_cast<unsigned char>(low[i])) ||
                                low[i] == ':' || low[i] == '(' || low[i] == '*')) {
        ++i;
      }
    };
    skip();
    if (low.compare(i, 2, "is") == 0 &&
        (i + 2 >= low.size() || !std::isalnum(static_cast<unsigned char>(low[i + 2])))) {
      i += 2;
      skip();
    }
    if (auto c = valid_at(text, i, valid_letters)) return c;
  }
  // "(X)"
  for (auto pos = text.find('('); pos != std::string_view::npos;
       pos = text.find('(', pos + 1)) {
    if (pos + 2 < text.size() && text[pos + 2] == ')') {
      if (auto c = valid_at(text, pos + 1, valid_letters)) return c;
    }
  }
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (auto c = valid_at(text, i, valid_letters)) return c;
  }
  return std::nullopt;
}

std::string serialize_boxes(std::span<const BoundingBox> boxes,
                            std::span<const std::string> labels) {
  json arr = json::array();
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto& b = boxes[i];
    json item = {{"bbox_2d", {b.x1, b.y1, b.x2, b.y2}}};
    item["label"] = i < labels.size() ? labels[i] : std::string{};
    arr.push_back(std::move(item));
  }
  return arr.dump(-1, ' ', false, json::error_handler_t::replace);
}

std::string serialize_points(std::span<const PointHypothesis> points,
                             std::span<const std::string> labels) {
  if (points.empty()) return {};
  std::string label = labels.empty() ? std::string{} : labels.front();
  label = attr_escape(label);
  if (points.size() == 1) {
    return "<point x=\"" + json_number(points[0].x) + "\" y=\"" +
           json_number(points[0].y) + "\" alt=\"" + label + "\">" + label +
           "</point>";
  }
  std::string out = "<points";
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto k = std::to_string(i + 1);
    out += " x" + k + "=\"" + json_number(points[i].x) + "\" y" + k + "=\"" +
           json_number(points[i].y) + "\"";
  }
  out += " alt=\"" + label + "\">" + label + "</points>";
  return out;
}

}  // namespace sparc
