#pragma once

// Batch evaluation, the ablation sweeps, Pareto reports and SFT harvesting.
// Every output is keyed by sample_id and sorted before it is serialized, so
// the worker count never changes a byte of any report.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparc/backend.hpp"
#include "sparc/dataset.hpp"
#include "sparc/pipeline.hpp"

namespace sparc {

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Summary {
  std::string config;  // e.g. "256/box/n8"
  std::string budget;
  std::string modality;
  int consistency_n = 1;
  std::size_t samples = 0;
  std::size_t correct = 0;
  std::size_t errors = 0;  // records carrying at least one error
  double accuracy = 0.0;
  double mean_raw_crops = 0.0;
  double mean_fused_crops = 0.0;
  double mean_stage1_visual_tokens = 0.0;
  double mean_stage2_visual_tokens = 0.0;
  double mean_stage1_completion_tokens = 0.0;
  double mean_total_tokens = 0.0;
};

std::string config_label(const PipelineConfig& cfg);

struct EvalResult {
  std::vector<EvalRecord> records;  // sorted by sample_id
  Summary summary;
};

// Throws std::invalid_argument on an empty dataset.
EvalResult evaluate(std::span<const BenchmarkSample> samples, const PipelineConfig& cfg,
                    const Backend& backend, int workers = 1);

Summary summarize(std::span<const EvalRecord> records, const PipelineConfig& cfg);

// Runs fn(i) for i in [0, n) on up to `workers` threads.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

// Fixed-point with four decimals, the format of every report float.
std::string fixed4(double v);

std::string summary_csv(std::span<const Summary> rows);
void write_summary_csv(const std::filesystem::path& path, std::span<const Summary> rows);
// Throws ReportError naming the offending column.
std::vector<Summary> parse_summary_csv(const std::string& text);
std::vector<Summary> read_summary_csv(const std::filesystem::path& path);

void write_records_jsonl(const std::filesystem::path& path,
                         std::span<const EvalRecord> records);

void write_text_file(const std::filesystem::path& path, const std::string& text);

// ---- sweeps -----------------------------------------------------------------

enum class SweepKind { kOverlap, kExpansion, kConsistency, kResolution };

std::string_view to_string(SweepKind kind);
std::optional<SweepKind> parse_sweep_kind(std::string_view text);

struct SweepSpec {
  SweepKind kind = SweepKind::kOverlap;
  // r fractions of the half-diagonal, scale factors, N values or budget
  // sides (0 stands for full), depending on kind.
  std::vector<double> grid;
  int directions_per_point = 4;
  std::vector<ResolutionBudget> budgets;  // empty: the pipeline budget
  std::uint64_t seed = 0;

  // Grid non-empty, sorted ascending and within the kind's range.
  void validate() const;
};

// n evenly spaced fractions in [0, 1].
std::vector<double> overlap_grid(int steps = 11);
// {1, 1.5, 2, 2.5, 3, 4, 6, 8, 10} truncated at max_scale.
std::vector<double> expansion_grid(double max_scale = 10.0);

struct OverlapRow {
  std::string budget;
  double r_fraction = 0.0;
  std::size_t trials = 0;
  double mean_overlap = 0.0;
  double mean_iou = 0.0;
  double accuracy = 0.0;
};

// For every r and direction the gt boxes are shifted, stage 1 is bypassed
// and stage 2 runs with the shifted crops. Throws std::invalid_argument if a
// sample has no gt boxes.
std::vector<OverlapRow> sweep_overlap(std::span<const BenchmarkSample> samples,
                                      const SweepSpec& spec, const PipelineConfig& cfg,
                                      const Backend& backend, int workers = 1);

struct ExpansionRow {
  std::string budget;
  double scale = 1.0;
  std::size_t trials = 0;
  double mean_crop_tokens = 0.0;
  // Share of the delivered crop area covered by the target.
  double mean_target_share = 0.0;
  // Longest side of the target in delivered crop pixels.
  double mean_target_px = 0.0;
  double accuracy = 0.0;
};

std::vector<ExpansionRow> sweep_expansion(std::span<const BenchmarkSample> samples,
                                          const SweepSpec& spec, const PipelineConfig& cfg,
                                          const Backend& backend, int workers = 1);

struct ConsistencyCell {
  std::string budget;
  double accuracy = 0.0;
  double mean_fused_crops = 0.0;
  double mean_raw_crops = 0.0;
  double mean_best_overlap = 0.0;
};

struct ConsistencyRow {
  int n = 1;
  std::vector<ConsistencyCell> cells;  // one per budget
  double average_accuracy = 0.0;
  double average_crops = 0.0;
  std::int64_t stage1_completion_tokens = 0;
};

// Stage-1 temperature is the configured one when set, else 0.7 for every N
// (including N = 1) so that the rows differ only in the rollout count.
std::vector<ConsistencyRow> sweep_consistency(std::span<const BenchmarkSample> samples,
                                              const SweepSpec& spec,
                                              const PipelineConfig& cfg,
                                              const Backend& backend, int workers = 1);

// One full evaluation per budget.
std::vector<Summary> sweep_resolution(std::span<const BenchmarkSample> samples,
                                      const SweepSpec& spec, const PipelineConfig& cfg,
                                      const Backend& backend, int workers = 1);

std::string overlap_csv(std::span<const OverlapRow> rows);
std::string expansion_csv(std::span<const ExpansionRow> rows);
std::string consistency_csv(std::span<const ConsistencyRow> rows);

// ---- Pareto -----------------------------------------------------------------

struct ParetoRow {
  std::string config;
  double mean_tokens = 0.0;
  double accuracy = 0.0;
  bool dominated = false;
};

// A row is dominated when another row is no more expensive and no less
// accurate, and strictly better on at least one of the two.
std::vector<ParetoRow> pareto_report(std::span<const Summary> summaries);
std::string pareto_csv(std::span<const ParetoRow> rows);
std::string pareto_json(std::span<const ParetoRow> rows);

// ---- SFT harvesting -----------------------------------------------------------

struct SftTrace {
  std::string sample_id;
  std::string image_path;
  std::string ird_prompt_text;
  std::string target;  // grounding output in the model's own schema
  std::string coord_space;
  std::string modality;
  std::string teacher;
  std::uint64_t seed = 0;
  bool verified = true;
};

std::string trace_to_json_line(const SftTrace& trace);
// Throws std::invalid_argument on a malformed line.
SftTrace parse_trace_line(const std::string& line);

// The union of the successful rollouts' geometry in rollout order,
// serialized in the model's own coordinates. When rollouts disagree on the
// box coordinate space the pixel-space boxes are written instead.
struct TraceTarget {
  std::string text;
  CoordSpace space = CoordSpace::kPixel;
};

TraceTarget trace_target(std::span<const IrdHypothesis> hyps, const PipelineConfig& cfg);

struct HarvestResult {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::vector<SftTrace> traces;    // sorted by sample_id
  std::vector<EvalRecord> records; // sorted by sample_id
};

// Runs the pipeline on every sample and keeps the stage-1 output of the
// samples answered correctly. The output file is opened before any
// inference; failure to open it throws std::runtime_error.
HarvestResult harvest_sft(std::span<const BenchmarkSample> samples,
                          const PipelineConfig& cfg, const Backend& backend,
                          const std::filesystem::path& out_path, int workers = 1);

// Re-runs a sample with the trace forced as its stage-1 output.
EvalRecord replay_trace(const BenchmarkSample& sample, const SftTrace& trace,
                        const PipelineConfig& cfg, const Backend& backend);

}  // namespace sparc
