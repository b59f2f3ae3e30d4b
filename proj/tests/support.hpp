#pragma once

// Shared fixtures: synthetic samples, scripted and failing backends, scratch
// directories.

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "sparc/backend.hpp"
#include "sparc/dataset.hpp"
#include "sparc/oracle_backend.hpp"

namespace sparc::testing {

inline BenchmarkSample make_sample(std::string id, ImageDims dims,
                                   std::vector<BoundingBox> gt, char answer = 'A',
                                   int n_choices = 4) {
  BenchmarkSample s;
  s.sample_id = std::move(id);
  s.image_path = "/nonexistent/" + s.sample_id + ".png";
  s.dims = dims;
  s.question = "What is the color of the " + s.sample_id + " object?";
  for (int i = 0; i < n_choices; ++i) {
    s.choices.push_back({static_cast<char>('A' + i), "option " + std::to_string(i)});
  }
  s.answer_letter = answer;
  s.gt_boxes = std::move(gt);
  return s;
}

// Samples with one gt box each, kept at least `margin` px from the border.
// Sizes and positions come from a plain mt19937_64 so fixtures do not depend
// on the library's own random helpers.
inline std::vector<BenchmarkSample> synthetic_samples(int n, std::uint64_t seed,
                                                      ImageDims dims = {4000, 3000},
                                                      int min_side = 80, int max_side = 400,
                                                      int margin = 400) {
  std::mt19937_64 gen(seed);
  auto pick = [&](int lo, int hi) {
    return lo + static_cast<int>(gen() % static_cast<std::uint64_t>(hi - lo + 1));
  };
  std::vector<BenchmarkSample> out;
  for (int i = 0; i < n; ++i) {
    const int w = pick(min_side, max_side);
    const int h = pick(min_side, max_side);
    const int x = pick(margin, dims.width - margin - w);
    const int y = pick(margin, dims.height - margin - h);
    char id[16];
    std::snprintf(id, sizeof id, "s%05d", i);
    out.push_back(make_sample(id, dims,
                              {{double(x), double(y), double(x + w), double(y + h)}},
                              static_cast<char>('A' + pick(0, 3))));
  }
  return out;
}

inline std::vector<OracleTruth> truths_for(const std::vector<BenchmarkSample>& samples) {
  std::vector<OracleTruth> out;
  for (const auto& s : samples) {
    out.push_back({s.sample_id, s.dims, s.gt_boxes, s.letters(), s.answer_letter});
  }
  return out;
}

// Answers through a callback; counts calls.
class ScriptedBackend : public Backend {
 public:
  using Fn = std::function<CompletionResult(const ChatRequest&)>;
  explicit ScriptedBackend(Fn fn, std::optional<CoordSpace> space = CoordSpace::kPixel)
      : fn_(std::move(fn)), space_(space) {}

  CompletionResult complete(const ChatRequest& req) const override {
    ++calls;
    return fn_(req);
  }
  std::string name() const override { return "scripted"; }
  std::optional<CoordSpace> box_space() const override { return space_; }

  mutable std::atomic<int> calls{0};

 private:
  Fn fn_;
  std::optional<CoordSpace> space_;
};

// Delegates to `inner` except for the listed samples, whose requests fail
// as if the endpoint were unreachable.
class FailingBackend : public Backend {
 public:
  FailingBackend(const Backend& inner, std::set<std::string> failing)
      : inner_(inner), failing_(std::move(failing)) {}

  CompletionResult complete(const ChatRequest& req) const override {
    if (failing_.count(req.tag.sample_id)) {
      return BackendError{ErrorKind::kNetwork, "connection refused", req.tag, 0, 3};
    }
    return inner_.complete(req);
  }
  std::string name() const override { return inner_.name(); }
  std::optional<CoordSpace> box_space() const override { return inner_.box_space(); }

 private:
  const Backend& inner_;
  std::set<std::string> failing_;
};

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() /
             ("sparc_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_dataset(const std::filesystem::path& p,
                          const std::vector<BenchmarkSample>& samples) {
  std::ofstream out(p, std::ios::binary);
  for (const auto& s : samples) out << sample_to_json_line(s) << "\n";
}

}  // namespace sparc::testing
