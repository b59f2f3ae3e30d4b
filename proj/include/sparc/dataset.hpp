#pragma once

// Multiple-choice VQA samples and their JSONL loader. Schema in
// docs/dataset.md.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparc/geometry.hpp"

namespace sparc {

struct Choice {
  char letter = 'A';
  std::string text;
};

struct BenchmarkSample {
  std::string sample_id;
  std::string image_path;
  ImageDims dims;
  std::string question;
  std::vector<Choice> choices;
  char answer_letter = 'A';
  std::vector<BoundingBox> gt_boxes;
  std::vector<std::string> tags;

  // Choice letters in order, e.g. "ABCD".
  std::string letters() const;
  // Throws std::invalid_argument naming the broken invariant.
  void validate() const;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetIssue {
  std::size_t line = 0;
  std::string message;
};

struct LoadOptions {
  // Strict: the first malformed line aborts the load. Lenient: malformed
  // lines are skipped and reported.
  bool strict = true;
  // When false a missing image file is accepted as long as the line gives
  // width and height (dimension-only runs against the oracle backend).
  bool require_images = true;
};

struct LoadedDataset {
  std::vector<BenchmarkSample> samples;
  std::vector<DatasetIssue> issues;
};

// Throws DatasetError when the file cannot be read, or on the first invalid
// line in strict mode (message carries the line number).
LoadedDataset load_dataset(const std::filesystem::path& path,
                           const LoadOptions& options = {});

// Single JSONL line -> sample. Relative image paths resolve against base_dir.
BenchmarkSample parse_sample_line(const std::string& line,
                                  const std::filesystem::path& base_dir,
                                  const LoadOptions& options);

std::string sample_to_json_line(const BenchmarkSample& sample);

}  // namespace sparc
