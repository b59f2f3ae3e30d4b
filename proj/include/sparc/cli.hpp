#pragma once

// Command-line front end: run, ablate, harvest, report and fuse. Exit codes
// are 0 on success, 1 on fatal configuration, dataset or I/O errors and 2
// when a run finished but some samples hit backend errors.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sparc/backend.hpp"
#include "sparc/config.hpp"
#include "sparc/dataset.hpp"

namespace sparc {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFatal = 1;
inline constexpr int kExitPartial = 2;

// Values as typed on the command line; unset means "not given".
struct CliOptions {
  std::optional<std::string> config;
  std::optional<std::string> dataset;
  std::optional<std::string> backend;
  std::optional<std::string> backend_url;
  std::optional<std::string> model;
  std::optional<std::string> resolution;
  std::optional<int> crop_cap;
  std::optional<int> consistency;
  std::optional<double> wbf_iou;
  std::optional<double> temperature;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> out_dir;
  std::optional<std::string> modality;
  std::optional<std::string> prompt_set;
  std::optional<int> point_side;
  std::optional<std::string> box_space;
  std::optional<int> max_in_flight;
  bool native = false;
  bool allow_missing_images = false;
  bool lenient = false;
  std::optional<double> timeout;
  std::optional<int> max_attempts;
  std::optional<double> oracle_sigma;
  std::optional<double> oracle_p_floor;
  std::optional<double> oracle_p_ceil;
  std::optional<double> oracle_ramp_a;
  std::optional<double> oracle_ramp_b;
  std::optional<double> oracle_fidelity_px;

  // ablate
  std::string sweep_kind;
  int steps = 11;
  int directions = 4;
  std::string n_grid = "1,4,8";
  double max_scale = 10.0;
  std::optional<std::string> budgets;

  // harvest
  std::optional<std::string> traces;

  // report
  std::vector<std::string> summaries;

  // fuse
  std::string fuse_input;
};

// Builds the parser; parsed values land in `opts`, which must outlive it.
std::unique_ptr<CLI::App> make_app(CliOptions& opts);

// Defaults, then the config file, then flags.
RunConfig resolve_run_config(const CliOptions& opts);

using BackendFactory = std::function<std::unique_ptr<Backend>(
    const RunConfig&, std::span<const BenchmarkSample>)>;

// Oracle over the loaded samples, or the HTTP client (API key from
// SPARC_API_KEY).
std::unique_ptr<Backend> default_backend(const RunConfig& cfg,
                                         std::span<const BenchmarkSample> samples);

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            const BackendFactory& factory = default_backend);

}  // namespace sparc
