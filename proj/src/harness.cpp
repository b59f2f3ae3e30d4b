#include "sparc/harness.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "sparc/prompts.hpp"
#include "sparc/seeding.hpp"

namespace sparc {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr std::uint64_t kDirectionDomain = 0xd1;

void sort_by_id(std::vector<EvalRecord>& records) {
  std::sort(records.begin(), records.end(),
            [](const EvalRecord& a, const EvalRecord& b) { return a.sample_id < b.sample_id; });
}

std::vector<ResolutionBudget> sweep_budgets(const SweepSpec& spec, const PipelineConfig& cfg) {
  if (spec.budgets.empty()) return {cfg.budget};
  return spec.budgets;
}

void require_gt(std::span<const BenchmarkSample> samples, std::string_view sweep) {
  if (samples.empty()) throw std::invalid_argument("dataset is empty");
  for (const auto& s : samples) {
    if (s.gt_boxes.empty()) {
      throw std::invalid_argument(std::string(sweep) + " sweep needs gt_boxes, sample '" +
                                  s.sample_id + "' has none");
    }
  }
}

// Stratified directions: D evenly spaced angles with a per-sample random
// phase. The same directions are reused at every grid point.
std::vector<std::array<double, 2>> directions_for(const BenchmarkSample& s, int count,
                                                  std::uint64_t seed) {
  Rng rng(mix_seed({seed, hash_string(s.sample_id), kDirectionDomain}));
  const double phase = rng.uniform();
  std::vector<std::array<double, 2>> out;
  for (int d = 0; d < count; ++d) {
    const double theta = 2.0 * std::numbers::pi * (d + phase) / count;
    out.push_back({std::cos(theta), std::sin(theta)});
  }
  return out;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

double mean(double sum, std::size_t n) { return n == 0 ? 0.0 : sum / static_cast<double>(n); }

}  // namespace

std::string config_label(const PipelineConfig& cfg) {
  const std::string budget = cfg.budget.label();
  if (cfg.native) return "native/" + budget;
  return budget + "/" + std::string(to_string(cfg.modality)) + "/n" +
         std::to_string(cfg.consistency_n);
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(workers, 1)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(failure_mu);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

EvalResult evaluate(std::span<const BenchmarkSample> samples, const PipelineConfig& cfg,
                    const Backend& backend, int workers) {
  if (samples.empty()) throw std::invalid_argument("dataset is empty");
  cfg.validate();
  EvalResult out;
  out.records.resize(samples.size());
  parallel_for(samples.size(), workers,
               [&](std::size_t i) { out.records[i] = run_sample(samples[i], cfg, backend); });
  sort_by_id(out.records);
  out.summary = summarize(out.records, cfg);
  return out;
}

Summary summarize(std::span<const EvalRecord> records, const PipelineConfig& cfg) {
  Summary s;
  s.config = config_label(cfg);
  s.budget = cfg.budget.label();
  s.modality = std::string(to_string(cfg.modality));
  s.consistency_n = cfg.native ? 0 : cfg.consistency_n;
  s.samples = records.size();
  double raw = 0, fused = 0, v1 = 0, v2 = 0, c1 = 0, total = 0;
  for (const auto& r : records) {
    if (r.correct) ++s.correct;
    if (!r.errors.empty()) ++s.errors;
    raw += r.raw_box_count;
    fused += static_cast<double>(r.fused_boxes.size());
    v1 += static_cast<double>(r.stage1_visual_tokens);
    v2 += static_cast<double>(r.stage2_visual_tokens);
    c1 += static_cast<double>(r.stage1_completion_tokens);
    total += static_cast<double>(r.total_tokens());
  }
  s.accuracy = mean(static_cast<double>(s.correct), s.samples);
  s.mean_raw_crops = mean(raw, s.samples);
  s.mean_fused_crops = mean(fused, s.samples);
  s.mean_stage1_visual_tokens = mean(v1, s.samples);
  s.mean_stage2_visual_tokens = mean(v2, s.samples);
  s.mean_stage1_completion_tokens = mean(c1, s.samples);
  s.mean_total_tokens = mean(total, s.samples);
  return s;
}

std::string fixed4(double v) {
  if (std::abs(v) < 0.00005) v = 0.0;  // no "-0.0000"
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// ---- summary CSV ----------------------------------------------------------------

namespace {

const std::vector<std::string> kSummaryColumns = {
    "config",           "budget",
    "modality",         "consistency_n",
    "samples",          "correct",
    "errors",           "accuracy",
    "mean_raw_crops",   "mean_fused_crops",
    "mean_stage1_visual_tokens", "mean_stage2_visual_tokens",
    "mean_stage1_completion_tokens", "mean_total_tokens",
};

}  // namespace

std::string summary_csv(std::span<const Summary> rows) {
  std::string out;
  for (std::size_t i = 0; i < kSummaryColumns.size(); ++i) {
    out += (i ? "," : "") + kSummaryColumns[i];
  }
  out += '\n';
  for (const auto& s : rows) {
    out += s.config + ',' + s.budget + ',' + s.modality + ',' +
           std::to_string(s.consistency_n) + ',' + std::to_string(s.samples) + ',' +
           std::to_string(s.correct) + ',' + std::to_string(s.errors) + ',' +
           fixed4(s.accuracy) + ',' + fixed4(s.mean_raw_crops) + ',' +
           fixed4(s.mean_fused_crops) + ',' + fixed4(s.mean_stage1_visual_tokens) + ',' +
           fixed4(s.mean_stage2_visual_tokens) + ',' +
           fixed4(s.mean_stage1_completion_tokens) + ',' + fixed4(s.mean_total_tokens) + '\n';
  }
  return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
  if (!out.flush()) throw std::runtime_error("write to '" + path.string() + "' failed");
}

void write_summary_csv(const std::filesystem::path& path, std::span<const Summary> rows) {
  write_text_file(path, summary_csv(rows));
}

std::vector<Summary> parse_summary_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ReportError("summary CSV is empty");
  strip_cr(line);
  const auto header = split_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const auto& name : kSummaryColumns) {
    if (!col.count(name)) throw ReportError("summary CSV is missing column '" + name + "'");
  }

  std::vector<Summary> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (line.empty()) continue;
    const auto cells = split_line(line);
    auto cell = [&](const std::string& name) -> const std::string& {
      const std::size_t i = col.at(name);
      if (i >= cells.size()) {
        throw ReportError("line " + std::to_string(lineno) + ": column '" + name +
                          "' is missing");
      }
      return cells[i];
    };
    auto number = [&](const std::string& name) {
      const std::string& v = cell(name);
      char* end = nullptr;
      const double d = std::strtod(v.c_str(), &end);
      if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(d)) {
        throw ReportError("line " + std::to_string(lineno) + ": column '" + name +
                          "' is not a number: '" + v + "'");
      }
      return d;
    };
    auto count = [&](const std::string& name) {
      const double d = number(name);
      if (d < 0 || d != std::floor(d)) {
        throw ReportError("line " + std::to_string(lineno) + ": column '" + name +
                          "' must be a non-negative integer");
      }
      return static_cast<std::size_t>(d);
    };
    Summary s;
    s.config = cell("config");
    s.budget = cell("budget");
    s.modality = cell("modality");
    s.consistency_n = static_cast<int>(count("consistency_n"));
    s.samples = count("samples");
    s.correct = count("correct");
    s.errors = count("errors");
    s.accuracy = number("accuracy");
    s.mean_raw_crops = number("mean_raw_crops");
    s.mean_fused_crops = number("mean_fused_crops");
    s.mean_stage1_visual_tokens = number("mean_stage1_visual_tokens");
    s.mean_stage2_visual_tokens = number("mean_stage2_visual_tokens");
    s.mean_stage1_completion_tokens = number("mean_stage1_completion_tokens");
    s.mean_total_tokens = number("mean_total_tokens");
    rows.push_back(std::move(s));
  }
  return rows;
}

std::vector<Summary> read_summary_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ReportError("cannot read '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_summary_csv(buf.str());
  } catch (const ReportError& e) {
    throw ReportError(path.string() + ": " + e.what());
  }
}

void write_records_jsonl(const std::filesystem::path& path,
                         std::span<const EvalRecord> records) {
  std::string text;
  for (const auto& r : records) {
    text += record_to_json_line(r);
    text += '\n';
  }
  write_text_file(path, text);
}

// ---- sweeps -----------------------------------------------------------------

std::string_view to_string(SweepKind kind) {
  switch (kind) {
    case SweepKind::kOverlap: return "overlap";
    case SweepKind::kExpansion: return "expansion";
    case SweepKind::kConsistency: return "consistency";
    case SweepKind::kResolution: return "resolution";
  }
  return "?";
}

std::optional<SweepKind> parse_sweep_kind(std::string_view text) {
  for (auto k : {SweepKind::kOverlap, SweepKind::kExpansion, SweepKind::kConsistency,
                 SweepKind::kResolution}) {
    if (to_string(k) == text) return k;
  }
  return std::nullopt;
}

void SweepSpec::validate() const {
  if (grid.empty()) throw std::invalid_argument("sweep grid must be non-empty");
  // In resolution grids 0 stands for full resolution, the largest budget.
  auto key = [&](double v) {
    return kind == SweepKind::kResolution && v == 0.0
               ? std::numeric_limits<double>::infinity()
               : v;
  };
  if (!std::is_sorted(grid.begin(), grid.end(),
                      [&](double a, double b) { return key(a) < key(b); })) {
    throw std::invalid_argument("sweep grid must be sorted ascending");
  }
  if (directions_per_point < 1) throw std::invalid_argument("directions must be >= 1");
  for (double v : grid) {
    switch (kind) {
      case SweepKind::kOverlap:
        if (!(v >= 0.0 && v <= 1.0)) {
          throw std::invalid_argument("overlap grid values must lie in [0, 1]");
        }
        break;
      case SweepKind::kExpansion:
        if (!(v >= 1.0 && v <= 10.0)) {
          throw std::invalid_argument("expansion grid values must lie in [1, 10]");
        }
        break;
      case SweepKind::kConsistency:
        if (!(v >= 1.0) || v != std::floor(v)) {
          throw std::invalid_argument("consistency grid values must be integers >= 1");
        }
        break;
      case SweepKind::kResolution:
        if (!(v >= 0.0) || v != std::floor(v)) {
          throw std::invalid_argument("resolution grid values must be sides >= 1 or 0 (full)");
        }
        break;
    }
  }
}

std::vector<double> overlap_grid(int steps) {
  if (steps < 1) throw std::invalid_argument("steps must be >= 1");
  if (steps == 1) return {0.0};
  std::vector<double> out;
  for (int i = 0; i < steps; ++i) out.push_back(static_cast<double>(i) / (steps - 1));
  return out;
}

std::vector<double> expansion_grid(double max_scale) {
  if (!(max_scale >= 1.0 && max_scale <= 10.0)) {
    throw std::invalid_argument("max scale must lie in [1, 10]");
  }
  std::vector<double> out;
  for (double s : {1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 6.0, 8.0, 10.0}) {
    if (s <= max_scale) out.push_back(s);
  }
  return out;
}

std::vector<OverlapRow> sweep_overlap(std::span<const BenchmarkSample> samples,
                                      const SweepSpec& spec, const PipelineConfig& cfg,
                                      const Backend& backend, int workers) {
  spec.validate();
  require_gt(samples, "overlap");
  const int dirs = spec.directions_per_point;
  std::vector<std::vector<std::array<double, 2>>> directions;
  for (const auto& s : samples) directions.push_back(directions_for(s, dirs, spec.seed));

  std::vector<OverlapRow> rows;
  for (const auto& budget : sweep_budgets(spec, cfg)) {
    PipelineConfig run_cfg = cfg;
    run_cfg.budget = budget;
    for (double frac : spec.grid) {
      const std::size_t trials = samples.size() * static_cast<std::size_t>(dirs);
      std::vector<double> overlap(trials), iou_v(trials);
      std::vector<char> correct(trials);
      parallel_for(trials, workers, [&](std::size_t t) {
        const std::size_t si = t / static_cast<std::size_t>(dirs);
        const int d = static_cast<int>(t % static_cast<std::size_t>(dirs));
        const BenchmarkSample& s = samples[si];
        std::vector<BoundingBox> crops;
        double ov = 0.0, io = 0.0;
        for (const auto& gt : s.gt_boxes) {
          PerturbationSpec ps;
          ps.r = frac * gt.half_diagonal();
          ps.direction = directions[si][static_cast<std::size_t>(d)];
          try {
            const BoundingBox shifted = perturb(gt, ps, s.dims, 0);
            ov += overlap_ratio(shifted, gt);
            io += iou(shifted, gt);
            crops.push_back(shifted);
          } catch (const GeometryError&) {
            // Window left the image entirely: no crop, zero overlap.
          }
        }
        const double n = static_cast<double>(s.gt_boxes.size());
        overlap[t] = ov / n;
        iou_v[t] = io / n;
        const EvalRecord rec = run_with_regions(s, crops, run_cfg, backend,
                                                static_cast<std::uint64_t>(d) + 1);
        correct[t] = rec.correct;
      });
      OverlapRow row;
      row.budget = budget.label();
      row.r_fraction = frac;
      row.trials = trials;
      double ov = 0, io = 0, acc = 0;
      for (std::size_t t = 0; t < trials; ++t) {
        ov += overlap[t];
        io += iou_v[t];
        acc += correct[t];
      }
      row.mean_overlap = mean(ov, trials);
      row.mean_iou = mean(io, trials);
      row.accuracy = mean(acc, trials);
      rows.push_back(row);
    }
  }
  return rows;
}

std::vector<ExpansionRow> sweep_expansion(std::span<const BenchmarkSample> samples,
                                          const SweepSpec& spec, const PipelineConfig& cfg,
                                          const Backend& backend, int workers) {
  spec.validate();
  require_gt(samples, "expansion");
  const int dirs = spec.directions_per_point;
  std::vector<ExpansionRow> rows;
  for (const auto& budget : sweep_budgets(spec, cfg)) {
    PipelineConfig run_cfg = cfg;
    run_cfg.budget = budget;
    for (double scale : spec.grid) {
      const std::size_t trials = samples.size() * static_cast<std::size_t>(dirs);
      std::vector<double> tokens(trials), share(trials), px(trials);
      std::vector<char> correct(trials);
      parallel_for(trials, workers, [&](std::size_t t) {
        const std::size_t si = t / static_cast<std::size_t>(dirs);
        const int d = static_cast<int>(t % static_cast<std::size_t>(dirs));
        const BenchmarkSample& s = samples[si];
        std::vector<BoundingBox> regions;
        for (const auto& gt : s.gt_boxes) regions.push_back(expand(gt, scale, s.dims));
        // Same reasoning seeds as the overlap sweep, so scale 1 repeats r = 0.
        const EvalRecord rec = run_with_regions(s, regions, run_cfg, backend,
                                                static_cast<std::uint64_t>(d) + 1);
        correct[t] = rec.correct;
        double tok = 0, sh = 0, p = 0;
        for (std::size_t i = 0; i < rec.crop_regions.size(); ++i) {
          const BoundingBox& region = rec.crop_regions[i];
          const ImageDims out = rec.crop_dims[i];
          tok += static_cast<double>(visual_tokens(out, run_cfg.patch));
          const BoundingBox& gt = s.gt_boxes[std::min(i, s.gt_boxes.size() - 1)];
          sh += intersection_area(region, gt) / region.area();
          const double zoom = out.longest_side() / std::max(region.width(), region.height());
          p += std::max(gt.width(), gt.height()) * zoom;
        }
        const double n = static_cast<double>(std::max<std::size_t>(rec.crop_regions.size(), 1));
        tokens[t] = tok;
        share[t] = sh / n;
        px[t] = p / n;
      });
      ExpansionRow row;
      row.budget = budget.label();
      row.scale = scale;
      row.trials = trials;
      double tok = 0, sh = 0, p = 0, acc = 0;
      for (std::size_t t = 0; t < trials; ++t) {
        tok += tokens[t];
        sh += share[t];
        p += px[t];
        acc += correct[t];
      }
      row.mean_crop_tokens = mean(tok, trials);
      row.mean_target_share = mean(sh, trials);
      row.mean_target_px = mean(p, trials);
      row.accuracy = mean(acc, trials);
      rows.push_back(row);
    }
  }
  return rows;
}

std::vector<ConsistencyRow> sweep_consistency(std::span<const BenchmarkSample> samples,
                                              const SweepSpec& spec,
                                              const PipelineConfig& cfg,
                                              const Backend& backend, int workers) {
  spec.validate();
  if (samples.empty()) throw std::invalid_argument("dataset is empty");
  const auto budgets = sweep_budgets(spec, cfg);
  std::vector<ConsistencyRow> rows;
  for (double nv : spec.grid) {
    ConsistencyRow row;
    row.n = static_cast<int>(nv);
    double acc_sum = 0, crop_sum = 0;
    for (const auto& budget : budgets) {
      PipelineConfig run_cfg = cfg;
      run_cfg.budget = budget;
      run_cfg.consistency_n = row.n;
      run_cfg.native = false;
      run_cfg.ird_temperature = cfg.ird_temperature.value_or(kConsistencyTemperature);
      const EvalResult res = evaluate(samples, run_cfg, backend, workers);

      ConsistencyCell cell;
      cell.budget = budget.label();
      cell.accuracy = res.summary.accuracy;
      cell.mean_fused_crops = res.summary.mean_fused_crops;
      cell.mean_raw_crops = res.summary.mean_raw_crops;
      std::map<std::string_view, const BenchmarkSample*> by_id;
      for (const auto& s : samples) by_id[s.sample_id] = &s;
      double best_sum = 0;
      std::size_t best_n = 0;
      for (const auto& r : res.records) {
        row.stage1_completion_tokens += r.stage1_completion_tokens;
        const BenchmarkSample& s = *by_id.at(r.sample_id);
        for (const auto& gt : s.gt_boxes) {
          double best = 0.0;
          for (const auto& f : r.fused_boxes) best = std::max(best, overlap_ratio(f.box, gt));
          best_sum += best;
          ++best_n;
        }
      }
      cell.mean_best_overlap = mean(best_sum, best_n);
      acc_sum += cell.accuracy;
      crop_sum += cell.mean_fused_crops;
      row.cells.push_back(cell);
    }
    row.average_accuracy = mean(acc_sum, budgets.size());
    row.average_crops = mean(crop_sum, budgets.size());
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<Summary> sweep_resolution(std::span<const BenchmarkSample> samples,
                                      const SweepSpec& spec, const PipelineConfig& cfg,
                                      const Backend& backend, int workers) {
  spec.validate();
  std::vector<Summary> out;
  for (double side : spec.grid) {
    PipelineConfig run_cfg = cfg;
    run_cfg.budget = side == 0.0 ? ResolutionBudget::full()
                                 : ResolutionBudget::capped(static_cast<int>(side));
    run_cfg.budget.crop_cap = cfg.budget.crop_cap;
    out.push_back(evaluate(samples, run_cfg, backend, workers).summary);
  }
  return out;
}

std::string overlap_csv(std::span<const OverlapRow> rows) {
  std::string out = "budget,r_fraction,trials,mean_overlap,mean_iou,accuracy\n";
  for (const auto& r : rows) {
    out += r.budget + ',' + fixed4(r.r_fraction) + ',' + std::to_string(r.trials) + ',' +
           fixed4(r.mean_overlap) + ',' + fixed4(r.mean_iou) + ',' + fixed4(r.accuracy) + '\n';
  }
  return out;
}

std::string expansion_csv(std::span<const ExpansionRow> rows) {
  std::string out =
      "budget,scale,trials,mean_crop_tokens,mean_target_share,mean_target_px,accuracy\n";
  for (const auto& r : rows) {
    out += r.budget + ',' + fixed4(r.scale) + ',' + std::to_string(r.trials) + ',' +
           fixed4(r.mean_crop_tokens) + ',' + fixed4(r.mean_target_share) + ',' +
           fixed4(r.mean_target_px) + ',' + fixed4(r.accuracy) + '\n';
  }
  return out;
}

std::string consistency_csv(std::span<const ConsistencyRow> rows) {
  std::string out = "n";
  if (!rows.empty()) {
    for (const auto& c : rows.front().cells) {
      out += ",accuracy_" + c.budget + ",crops_" + c.budget;
    }
  }
  out += ",average_accuracy,average_crops,stage1_completion_tokens\n";
  for (const auto& r : rows) {
    out += std::to_string(r.n);
    for (const auto& c : r.cells) {
      out += ',' + fixed4(c.accuracy) + ',' + fixed4(c.mean_fused_crops);
    }
    out += ',' + fixed4(r.average_accuracy) + ',' + fixed4(r.average_crops) + ',' +
           std::to_string(r.stage1_completion_tokens) + '\n';
  }
  return out;
}

// ---- Pareto -----------------------------------------------------------------

std::vector<ParetoRow> pareto_report(std::span<const Summary> summaries) {
  std::vector<ParetoRow> rows;
  for (const auto& s : summaries) rows.push_back({s.config, s.mean_total_tokens, s.accuracy, false});
  for (auto& a : rows) {
    for (const auto& b : rows) {
      const bool no_worse = b.mean_tokens <= a.mean_tokens && b.accuracy >= a.accuracy;
      const bool better = b.mean_tokens < a.mean_tokens || b.accuracy > a.accuracy;
      if (no_worse && better) {
        a.dominated = true;
        break;
      }
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const ParetoRow& a, const ParetoRow& b) {
    return a.mean_tokens < b.mean_tokens;
  });
  return rows;
}

std::string pareto_csv(std::span<const ParetoRow> rows) {
  std::string out = "config,mean_total_tokens,accuracy,dominated\n";
  for (const auto& r : rows) {
    out += r.config + ',' + fixed4(r.mean_tokens) + ',' + fixed4(r.accuracy) + ',' +
           (r.dominated ? "true" : "false") + '\n';
  }
  return out;
}

std::string pareto_json(std::span<const ParetoRow> rows) {
  ordered_json points = ordered_json::array();
  ordered_json frontier = ordered_json::array();
  for (const auto& r : rows) {
    points.push_back({{"config", r.config},
                      {"mean_total_tokens", r.mean_tokens},
                      {"accuracy", r.accuracy},
                      {"dominated", r.dominated}});
    if (!r.dominated) frontier.push_back(r.config);
  }
  ordered_json doc = {{"x", "mean_total_tokens"},
                      {"y", "accuracy"},
                      {"points", std::move(points)},
                      {"frontier", std::move(frontier)}};
  return doc.dump(2, ' ', false, ordered_json::error_handler_t::replace) + "\n";
}

// ---- SFT harvesting -----------------------------------------------------------

std::string trace_to_json_line(const SftTrace& t) {
  ordered_json doc;
  doc["sample_id"] = t.sample_id;
  doc["image_path"] = t.image_path;
  doc["ird_prompt_text"] = t.ird_prompt_text;
  doc["target"] = t.target;
  doc["coord_space"] = t.coord_space;
  doc["modality"] = t.modality;
  doc["provenance"] = {{"teacher", t.teacher}, {"seed", t.seed}, {"verified", t.verified}};
  return doc.dump(-1, ' ', false, ordered_json::error_handler_t::replace);
}

SftTrace parse_trace_line(const std::string& line) {
  const json doc = json::parse(line, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw std::invalid_argument("trace line is not a JSON object");
  }
  try {
    SftTrace t;
    t.sample_id = doc.at("sample_id").get<std::string>();
    t.image_path = doc.at("image_path").get<std::string>();
    t.ird_prompt_text = doc.at("ird_prompt_text").get<std::string>();
    t.target = doc.at("target").get<std::string>();
    t.coord_space = doc.at("coord_space").get<std::string>();
    t.modality = doc.at("modality").get<std::string>();
    const json& prov = doc.at("provenance");
    t.teacher = prov.at("teacher").get<std::string>();
    t.seed = prov.at("seed").get<std::uint64_t>();
    t.verified = prov.at("verified").get<bool>();
    return t;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed trace: ") + e.what());
  }
}

TraceTarget trace_target(std::span<const IrdHypothesis> hyps, const PipelineConfig& cfg) {
  TraceTarget out;
  std::vector<std::string> labels;
  if (cfg.modality == Modality::kPoint) {
    std::vector<PointHypothesis> points;
    for (const auto& h : hyps) {
      points.insert(points.end(), h.raw_points.begin(), h.raw_points.end());
      labels.insert(labels.end(), h.labels.begin(), h.labels.end());
    }
    out.text = serialize_points(points, labels);
    out.space = cfg.point_space;
    return out;
  }
  std::optional<CoordSpace> space;
  bool mixed = false;
  for (const auto& h : hyps) {
    if (h.raw_boxes.empty() || !h.box_space) continue;
    if (space && *space != *h.box_space) mixed = true;
    space = h.box_space;
  }
  std::vector<BoundingBox> boxes;
  for (const auto& h : hyps) {
    const auto& src = mixed ? h.boxes : h.raw_boxes;
    boxes.insert(boxes.end(), src.begin(), src.end());
    labels.insert(labels.end(), h.labels.begin(), h.labels.end());
  }
  out.space = mixed || !space ? CoordSpace::kPixel : *space;
  out.text = serialize_boxes(boxes, labels);
  return out;
}

HarvestResult harvest_sft(std::span<const BenchmarkSample> samples,
                          const PipelineConfig& cfg, const Backend& backend,
                          const std::filesystem::path& out_path, int workers) {
  if (cfg.native) throw std::invalid_argument("harvesting needs stage 1; native mode is set");
  if (out_path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(out_path.parent_path(), ec);
  }
  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + out_path.string() + "'");

  EvalResult eval = evaluate(samples, cfg, backend, workers);
  std::map<std::string_view, const BenchmarkSample*> by_id;
  for (const auto& s : samples) by_id[s.sample_id] = &s;
  const std::string teacher = cfg.model_name.empty() ? backend.name() : cfg.model_name;
  const auto hint = cfg.box_space ? cfg.box_space : backend.box_space();

  HarvestResult res;
  for (const auto& rec : eval.records) {
    if (!rec.correct) {
      ++res.rejected;
      continue;
    }
    const BenchmarkSample& s = *by_id.at(rec.sample_id);
    // Re-parsing the kept outputs gives back the exact geometry the
    // pipeline fused, rollout by rollout.
    std::vector<IrdHypothesis> hyps;
    for (std::size_t k = 0; k < rec.stage1_texts.size(); ++k) {
      hyps.push_back(parse_ird_output({rec.stage1_texts[k], Stage::kIrd, static_cast<int>(k)},
                                      s.dims, cfg, hint));
    }
    const TraceTarget target = trace_target(hyps, cfg);
    SftTrace t;
    t.sample_id = s.sample_id;
    t.image_path = s.image_path;
    t.ird_prompt_text = joined_text(build_ird_prompt(s, cfg).front());
    t.target = target.text;
    t.coord_space = std::string(to_string(target.space));
    t.modality = std::string(to_string(cfg.modality));
    t.teacher = teacher;
    t.seed = cfg.global_seed;
    t.verified = true;
    out << trace_to_json_line(t) << '\n';
    res.traces.push_back(std::move(t));
    ++res.accepted;
  }
  if (!out.flush()) throw std::runtime_error("write to '" + out_path.string() + "' failed");
  res.records = std::move(eval.records);
  return res;
}

EvalRecord replay_trace(const BenchmarkSample& sample, const SftTrace& trace,
                        const PipelineConfig& cfg, const Backend& backend) {
  PipelineConfig replay_cfg = cfg;
  if (const auto m = parse_modality(trace.modality)) replay_cfg.modality = *m;
  ForcedIrdOutput forced{trace.target, std::nullopt};
  const auto space = parse_coord_space(trace.coord_space);
  if (replay_cfg.modality == Modality::kPoint) {
    if (space) replay_cfg.point_space = *space;
  } else {
    forced.box_space = space;
  }
  replay_cfg.prompt_set.clear();
  return run_sample_forced(sample, replay_cfg, backend, forced);
}

}  // namespace sparc
