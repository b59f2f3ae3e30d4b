#include "sparc/dataset.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "sparc/image.hpp"

namespace sparc {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& msg) { throw std::invalid_argument(msg); }

std::string require_string(const json& doc, const char* key) {
  auto it = doc.find(key);
  if (it == doc.end()) bad(std::string("missing field '") + key + "'");
  if (!it->is_string()) bad(std::string("field '") + key + "' must be a string");
  return it->get<std::string>();
}

char parse_letter(const json& value, const char* what) {
  if (!value.is_string() || value.get<std::string>().size() != 1 ||
      !std::isalpha(static_cast<unsigned char>(value.get<std::string>()[0]))) {
    bad(std::string(what) + " must be a single letter");
  }
  return static_cast<char>(std::toupper(static_cast<unsigned char>(value.get<std::string>()[0])));
}

std::vector<Choice> parse_choices(const json& doc) {
  auto it = doc.find("choices");
  if (it == doc.end()) bad("missing field 'choices'");
  std::vector<Choice> out;
  if (it->is_array()) {
    for (std::size_t i = 0; i < it->size(); ++i) {
      const json& c = (*it)[i];
      if (c.is_string()) {
        if (i >= 26) bad("too many choices");
        out.push_back({static_cast<char>('A' + i), c.get<std::string>()});
      } else if (c.is_object() && c.contains("letter") && c.contains("text") &&
                 c["text"].is_string()) {
        out.push_back({parse_letter(c["letter"], "choice letter"),
                       c["text"].get<std::string>()});
      } else {
        bad("choice " + std::to_string(i) + " must be a string or {letter, text}");
      }
    }
  } else if (it->is_object()) {
    for (const auto& [key, text] : it->items()) {
      if (!text.is_string()) bad("choice '" + key + "' must map to a string");
      out.push_back({parse_letter(json(key), "choice letter"), text.get<std::string>()});
    }
  } else {
    bad("field 'choices' must be an array or an object");
  }
  return out;
}

}  // namespace

std::string BenchmarkSample::letters() const {
  std::string out;
  for (const auto& c : choices) out += c.letter;
  return out;
}

void BenchmarkSample::validate() const {
  if (sample_id.empty()) bad("sample_id must be non-empty");
  if (question.empty()) bad("question must be non-empty");
  if (!dims.valid()) bad("image dimensions must be positive");
  if (choices.empty()) bad("at least one choice is required");
  std::set<char> seen;
  for (const auto& c : choices) {
    if (!seen.insert(c.letter).second) {
      bad(std::string("duplicate choice letter '") + c.letter + "'");
    }
  }
  if (!seen.count(answer_letter)) {
    bad(std::string("answer_letter '") + answer_letter + "' is not among the choices");
  }
  const BoundingBox frame = image_frame(dims);
  for (const auto& b : gt_boxes) {
    if (!b.valid()) {
      bad("gt box " + b.to_string() + " violates x1 < x2 and y1 < y2");
    }
    if (b.x1 < frame.x1 || b.y1 < frame.y1 || b.x2 > frame.x2 || b.y2 > frame.y2) {
      bad("gt box " + b.to_string() + " lies outside the image");
    }
  }
}

BenchmarkSample parse_sample_line(const std::string& line,
                                  const std::filesystem::path& base_dir,
                                  const LoadOptions& options) {
  json doc = json::parse(line, nullptr, false);
  if (doc.is_discarded()) bad("not valid JSON");
  if (!doc.is_object()) bad("line must hold a JSON object");

  BenchmarkSample s;
  auto id = doc.find("sample_id");
  if (id == doc.end()) bad("missing field 'sample_id'");
  if (id->is_string()) {
    s.sample_id = id->get<std::string>();
  } else if (id->is_number_integer()) {
    s.sample_id = std::to_string(id->get<long long>());
  } else {
    bad("field 'sample_id' must be a string or integer");
  }
  s.image_path = require_string(doc, "image_path");
  s.question = require_string(doc, "question");
  s.choices = parse_choices(doc);
  auto ans = doc.find("answer_letter");
  if (ans == doc.end()) bad("missing field 'answer_letter'");
  s.answer_letter = parse_letter(*ans, "answer_letter");

  if (auto gt = doc.find("gt_boxes"); gt != doc.end() && !gt->is_null()) {
    if (!gt->is_array()) bad("field 'gt_boxes' must be an array");
    for (const auto& b : *gt) {
      if (!b.is_array() || b.size() != 4 ||
          !std::all_of(b.begin(), b.end(), [](const json& v) { return v.is_number(); })) {
        bad("each gt box must be [x1, y1, x2, y2]");
      }
      s.gt_boxes.push_back({b[0].get<double>(), b[1].get<double>(),
                            b[2].get<double>(), b[3].get<double>()});
    }
  }
  if (auto tags = doc.find("tags"); tags != doc.end() && tags->is_array()) {
    for (const auto& t : *tags) {
      if (t.is_string()) s.tags.push_back(t.get<std::string>());
    }
  }
  if (auto split = doc.find("split"); split != doc.end() && split->is_string()) {
    s.tags.push_back(split->get<std::string>());
  }

  std::optional<ImageDims> declared;
  if (doc.contains("width") || doc.contains("height")) {
    if (!doc.value("width", json()).is_number_integer() ||
        !doc.value("height", json()).is_number_integer()) {
      bad("'width' and 'height' must both be integers");
    }
    declared = ImageDims{doc["width"].get<int>(), doc["height"].get<int>()};
  }

  std::filesystem::path image = s.image_path;
  if (image.is_relative()) image = base_dir / image;
  std::error_code ec;
  if (std::filesystem::exists(image, ec)) {
    auto probed = probe_image_dims(image);
    if (!probed) bad("image '" + image.string() + "' is not a readable image");
    if (declared && *declared != *probed) {
      bad("declared size does not match image '" + image.string() + "'");
    }
    s.dims = *probed;
  } else if (options.require_images) {
    bad("image '" + image.string() + "' does not exist");
  } else if (declared) {
    s.dims = *declared;
  } else {
    bad("image '" + image.string() + "' does not exist and no width/height given");
  }
  s.image_path = image.string();
  s.validate();
  return s;
}

LoadedDataset load_dataset(const std::filesystem::path& path,
                           const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open dataset '" + path.string() + "'");
  LoadedDataset out;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  const auto base_dir = path.parent_path();
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      BenchmarkSample s = parse_sample_line(line, base_dir, options);
      if (!ids.insert(s.sample_id).second) bad("duplicate sample_id '" + s.sample_id + "'");
      out.samples.push_back(std::move(s));
    } catch (const std::invalid_argument& e) {
      if (options.strict) {
        throw DatasetError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
      out.issues.push_back({lineno, e.what()});
    }
  }
  return out;
}

std::string sample_to_json_line(const BenchmarkSample& s) {
  json choices = json::array();
  for (const auto& c : s.choices) {
    choices.push_back({{"letter", std::string(1, c.letter)}, {"text", c.text}});
  }
  json doc = {{"sample_id", s.sample_id},
              {"image_path", s.image_path},
              {"width", s.dims.width},
              {"height", s.dims.height},
              {"question", s.question},
              {"choices", std::move(choices)},
              {"answer_letter", std::string(1, s.answer_letter)}};
  if (!s.gt_boxes.empty()) {
    json boxes = json::array();
    for (const auto& b : s.gt_boxes) boxes.push_back({b.x1, b.y1, b.x2, b.y2});
    doc["gt_boxes"] = std::move(boxes);
  }
  if (!s.tags.empty()) doc["tags"] = s.tags;
  return doc.dump(-1, ' ', false, json::error_handler_t::replace);
}

}  // namespace sparc
