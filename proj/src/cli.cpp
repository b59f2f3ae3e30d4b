#include "sparc/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "sparc/fusion.hpp"
#include "sparc/harness.hpp"
#include "sparc/http_backend.hpp"
#include "sparc/oracle_backend.hpp"

namespace sparc {

namespace {

using nlohmann::json;

void add_run_flags(CLI::App& cmd, CliOptions& o) {
  cmd.add_option("--config", o.config, "TOML or JSON config file (flags override it)");
  cmd.add_option("--dataset", o.dataset, "JSONL dataset, schema in docs/dataset.md");
  cmd.add_option("--backend", o.backend, "Inference backend")
      ->check(CLI::IsMember({"oracle", "http"}));
  cmd.add_option("--backend-url", o.backend_url,
                 "Chat-completions endpoint URL for the http backend");
  cmd.add_option("--model", o.model, "Model name sent to the backend and recorded in traces");
  cmd.add_option("--resolution", o.resolution,
                 "Longest-side cap of the base image: a pixel count such as 256 or 512, or full");
  cmd.add_option("--crop-cap", o.crop_cap,
                 "Longest-side cap for crops (default: same as --resolution)");
  cmd.add_option("--consistency", o.consistency, "Number of stage-1 rollouts fused with WBF");
  cmd.add_option("--wbf-iou", o.wbf_iou, "IoU threshold at which fusion merges boxes");
  cmd.add_option("--temperature", o.temperature,
                 "Stage-1 sampling temperature (default 0.7 when --consistency > 1, else 0)");
  cmd.add_option("--seed", o.seed, "Global seed; the only source of randomness");
  cmd.add_option("--workers", o.workers, "Samples evaluated in parallel");
  cmd.add_option("--out-dir", o.out_dir, "Directory for reports and records");
  cmd.add_option("--modality", o.modality, "Grounding output: box (JSON boxes) or point (point tags)")
      ->check(CLI::IsMember({"box", "point"}));
  cmd.add_option("--prompt-set", o.prompt_set,
                 "Prompt templates: qwen3vl (box) or molmo2 (point); default follows --modality");
  cmd.add_option("--point-side", o.point_side, "Side of the square crop placed around each point");
  cmd.add_option("--box-space", o.box_space,
                 "Coordinate space of model boxes: pixel, norm_1000 or percent (default: inferred)")
      ->check(CLI::IsMember({"pixel", "norm_1000", "percent"}));
  cmd.add_option("--max-in-flight", o.max_in_flight,
                 "Concurrent backend requests per sample (rollout fan-out)");
  cmd.add_flag("--native", o.native, "Skip stage 1 and answer from the base image alone");
  cmd.add_flag("--allow-missing-images", o.allow_missing_images,
               "Accept samples whose image file is absent if width and height are given");
  cmd.add_flag("--lenient", o.lenient, "Skip malformed dataset lines instead of failing");
  cmd.add_option("--timeout", o.timeout, "HTTP request timeout in seconds");
  cmd.add_option("--max-attempts", o.max_attempts, "HTTP attempts per request, retries included");
  cmd.add_option("--oracle-sigma", o.oracle_sigma,
                 "Oracle box-center noise, as a fraction of the half-diagonal at T=0.7");
  cmd.add_option("--oracle-p-floor", o.oracle_p_floor, "Oracle accuracy with no useful crop");
  cmd.add_option("--oracle-p-ceil", o.oracle_p_ceil, "Oracle accuracy with a fully covering crop");
  cmd.add_option("--oracle-ramp-a", o.oracle_ramp_a, "Coverage where oracle accuracy starts rising");
  cmd.add_option("--oracle-ramp-b", o.oracle_ramp_b, "Coverage where oracle accuracy saturates");
  cmd.add_option("--oracle-fidelity-px", o.oracle_fidelity_px,
                 "Target size in delivered pixels below which oracle evidence is discounted (0 = off)");
}

std::vector<std::string> split_csv_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<ResolutionBudget> parse_budgets(const std::string& text) {
  std::vector<ResolutionBudget> out;
  for (const auto& item : split_csv_list(text)) {
    try {
      out.push_back(ResolutionBudget::parse(item));
    } catch (const std::exception&) {
      throw ConfigError("bad budget '" + item + "' (expected a pixel count or full)");
    }
  }
  if (out.empty()) throw ConfigError("budget list is empty");
  return out;
}

std::vector<double> parse_n_grid(const std::string& text) {
  std::vector<double> out;
  for (const auto& item : split_csv_list(text)) {
    char* end = nullptr;
    const long v = std::strtol(item.c_str(), &end, 10);
    if (end != item.c_str() + item.size() || v < 1) {
      throw ConfigError("bad rollout count '" + item + "' in --n");
    }
    out.push_back(static_cast<double>(v));
  }
  if (out.empty()) throw ConfigError("--n is empty");
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

struct Loaded {
  RunConfig cfg;
  std::vector<BenchmarkSample> samples;
  std::unique_ptr<Backend> backend;
};

Loaded load_run(const CliOptions& opts, const BackendFactory& factory, std::ostream& err) {
  Loaded l;
  l.cfg = resolve_run_config(opts);
  if (l.cfg.dataset.empty()) throw ConfigError("no dataset given (--dataset or run.dataset)");
  LoadOptions lo;
  lo.strict = l.cfg.strict;
  lo.require_images = !l.cfg.allow_missing_images;
  LoadedDataset data = load_dataset(l.cfg.dataset, lo);
  for (const auto& issue : data.issues) {
    err << "warning: " << l.cfg.dataset << ":" << issue.line << ": " << issue.message << "\n";
  }
  if (data.samples.empty()) throw DatasetError("dataset '" + l.cfg.dataset + "' has no valid samples");
  l.samples = std::move(data.samples);
  l.backend = factory(l.cfg, l.samples);
  return l;
}

std::filesystem::path out_path(const RunConfig& cfg, const std::string& name) {
  return std::filesystem::path(cfg.out_dir) / name;
}

int cmd_run(const CliOptions& opts, const BackendFactory& factory, std::ostream& out,
            std::ostream& err) {
  Loaded l = load_run(opts, factory, err);
  const EvalResult res = evaluate(l.samples, l.cfg.pipeline, *l.backend, l.cfg.workers);
  write_records_jsonl(out_path(l.cfg, "records.jsonl"), res.records);
  const std::vector<Summary> rows = {res.summary};
  write_summary_csv(out_path(l.cfg, "summary.csv"), rows);
  const Summary& s = res.summary;
  out << s.config << ": accuracy " << fixed4(s.accuracy) << " over " << s.samples
      << " samples, scored " << (s.samples - s.errors) << " / " << s.samples << "\n";
  if (s.errors > 0) {
    for (const auto& r : res.records) {
      for (const auto& e : r.errors) err << "error: " << r.sample_id << ": " << e << "\n";
    }
    err << s.errors << " of " << s.samples << " samples hit backend errors\n";
    return kExitPartial;
  }
  return kExitOk;
}

int cmd_ablate(const CliOptions& opts, const BackendFactory& factory, std::ostream& out,
               std::ostream& err) {
  const auto kind = parse_sweep_kind(opts.sweep_kind);
  if (!kind) throw ConfigError("unknown sweep '" + opts.sweep_kind + "'");
  Loaded l = load_run(opts, factory, err);
  const PipelineConfig& pc = l.cfg.pipeline;
  pc.validate();
  SweepSpec spec;
  spec.kind = *kind;
  spec.seed = pc.global_seed;
  spec.directions_per_point = opts.directions;
  if (opts.budgets) spec.budgets = parse_budgets(*opts.budgets);

  switch (*kind) {
    case SweepKind::kOverlap: {
      spec.grid = overlap_grid(opts.steps);
      const auto rows = sweep_overlap(l.samples, spec, pc, *l.backend, l.cfg.workers);
      for (const auto& b : spec.budgets.empty() ? std::vector{pc.budget} : spec.budgets) {
        std::vector<OverlapRow> mine;
        for (const auto& r : rows) {
          if (r.budget == b.label()) mine.push_back(r);
        }
        const auto path = out_path(l.cfg, "overlap_" + b.label() + ".csv");
        write_text_file(path, overlap_csv(mine));
        out << "wrote " << path.string() << " (" << mine.size() << " rows)\n";
      }
      break;
    }
    case SweepKind::kExpansion: {
      spec.grid = expansion_grid(opts.max_scale);
      const auto rows = sweep_expansion(l.samples, spec, pc, *l.backend, l.cfg.workers);
      for (const auto& b : spec.budgets.empty() ? std::vector{pc.budget} : spec.budgets) {
        std::vector<ExpansionRow> mine;
        for (const auto& r : rows) {
          if (r.budget == b.label()) mine.push_back(r);
        }
        const auto path = out_path(l.cfg, "expansion_" + b.label() + ".csv");
        write_text_file(path, expansion_csv(mine));
        out << "wrote " << path.string() << " (" << mine.size() << " rows)\n";
      }
      break;
    }
    case SweepKind::kConsistency: {
      spec.grid = parse_n_grid(opts.n_grid);
      const auto rows = sweep_consistency(l.samples, spec, pc, *l.backend, l.cfg.workers);
      const auto path = out_path(l.cfg, "consistency.csv");
      write_text_file(path, consistency_csv(rows));
      out << "wrote " << path.string() << " (" << rows.size() << " rows)\n";
      break;
    }
    case SweepKind::kResolution: {
      const auto budgets = parse_budgets(opts.budgets.value_or("256,512,full"));
      std::vector<Summary> summaries;
      for (const auto& b : budgets) {
        SweepSpec one = spec;
        one.grid = {static_cast<double>(b.longest_side.value_or(0))};
        auto s = sweep_resolution(l.samples, one, pc, *l.backend, l.cfg.workers);
        summaries.insert(summaries.end(), s.begin(), s.end());
      }
      for (const auto& s : summaries) {
        const auto path = out_path(l.cfg, "summary_" + s.budget + ".csv");
        const std::vector<Summary> one = {s};
        write_summary_csv(path, one);
        out << "wrote " << path.string() << "\n";
      }
      const auto pareto = pareto_report(summaries);
      write_text_file(out_path(l.cfg, "pareto.csv"), pareto_csv(pareto));
      write_text_file(out_path(l.cfg, "pareto.json"), pareto_json(pareto));
      out << "wrote " << out_path(l.cfg, "pareto.csv").string() << "\n";
      break;
    }
  }
  return kExitOk;
}

int cmd_harvest(const CliOptions& opts, const BackendFactory& factory, std::ostream& out,
                std::ostream& err) {
  Loaded l = load_run(opts, factory, err);
  const std::filesystem::path path =
      opts.traces ? std::filesystem::path(*opts.traces) : out_path(l.cfg, "sft_traces.jsonl");
  const HarvestResult res =
      harvest_sft(l.samples, l.cfg.pipeline, *l.backend, path, l.cfg.workers);
  out << "accepted " << res.accepted << " / rejected " << res.rejected << "\n";
  out << "wrote " << path.string() << "\n";
  return kExitOk;
}

int cmd_report(const CliOptions& opts, std::ostream& out) {
  if (opts.summaries.empty()) throw ConfigError("report needs at least one summary CSV");
  std::vector<Summary> all;
  for (const auto& p : opts.summaries) {
    auto rows = read_summary_csv(p);
    all.insert(all.end(), rows.begin(), rows.end());
  }
  const auto rows = pareto_report(all);
  const std::filesystem::path dir = opts.out_dir.value_or("out");
  write_text_file(dir / "pareto.csv", pareto_csv(rows));
  write_text_file(dir / "pareto.json", pareto_json(rows));
  out << pareto_csv(rows);
  return kExitOk;
}

// Input: JSON array of rollouts, each an array of [x1, y1, x2, y2] boxes.
int cmd_fuse(const CliOptions& opts, std::ostream& out) {
  std::ifstream in(opts.fuse_input, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + opts.fuse_input + "'");
  const json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded() || !doc.is_array()) {
    throw ConfigError(opts.fuse_input + ": expected a JSON array of rollouts");
  }
  std::vector<RolloutBox> boxes;
  for (std::size_t r = 0; r < doc.size(); ++r) {
    if (!doc[r].is_array()) throw ConfigError("rollout " + std::to_string(r) + " is not an array");
    for (std::size_t i = 0; i < doc[r].size(); ++i) {
      const json& b = doc[r][i];
      if (!b.is_array() || b.size() != 4 ||
          !std::all_of(b.begin(), b.end(), [](const json& v) { return v.is_number(); })) {
        throw ConfigError("rollout " + std::to_string(r) + " box " + std::to_string(i) +
                          " must be [x1, y1, x2, y2]");
      }
      const BoundingBox box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                            b[3].get<double>()};
      if (!box.valid()) {
        throw ConfigError("rollout " + std::to_string(r) + " box " + std::to_string(i) +
                          " violates x1 < x2 and y1 < y2");
      }
      boxes.push_back({static_cast<int>(r), static_cast<int>(i), box});
    }
  }
  FusionConfig fc;
  if (opts.wbf_iou) fc.iou_threshold = *opts.wbf_iou;
  fc.validate();
  json result = json::array();
  for (const auto& f : weighted_boxes_fusion(std::move(boxes), fc)) {
    result.push_back({{"box", {f.box.x1, f.box.y1, f.box.x2, f.box.y2}},
                      {"member_count", f.member_count},
                      {"member_rollouts", f.member_rollouts}});
  }
  out << result.dump() << "\n";
  return kExitOk;
}

}  // namespace

std::unique_ptr<CLI::App> make_app(CliOptions& o) {
  auto app = std::make_unique<CLI::App>(
      "Two-stage perception/reasoning evaluation for vision-language models", "sparc");
  app->require_subcommand(1);

  auto* run = app->add_subcommand("run", "Evaluate a dataset; writes records.jsonl and summary.csv");
  add_run_flags(*run, o);

  auto* ablate = app->add_subcommand("ablate", "Run an ablation sweep; writes one CSV per budget");
  ablate->add_option("kind", o.sweep_kind, "Sweep: overlap, expansion, consistency or resolution")
      ->required()
      ->check(CLI::IsMember({"overlap", "expansion", "consistency", "resolution"}));
  add_run_flags(*ablate, o);
  ablate->add_option("--steps", o.steps, "Overlap sweep: number of shift fractions in [0, 1]")
      ->capture_default_str();
  ablate->add_option("--directions", o.directions, "Overlap sweep: shift directions per point")
      ->capture_default_str();
  ablate->add_option("--n", o.n_grid, "Consistency sweep: comma-separated rollout counts")
      ->capture_default_str();
  ablate->add_option("--max-scale", o.max_scale, "Expansion sweep: largest scale factor (<= 10)")
      ->capture_default_str();
  ablate->add_option("--budgets", o.budgets,
                     "Comma-separated budgets to sweep, e.g. 256,512,full");

  auto* harvest = app->add_subcommand(
      "harvest", "Keep stage-1 outputs of correctly answered samples as SFT traces");
  add_run_flags(*harvest, o);
  harvest->add_option("--traces", o.traces,
                      "Output JSONL for traces (default: <out-dir>/sft_traces.jsonl)");

  auto* report = app->add_subcommand("report", "Merge summary CSVs into a Pareto table");
  report->add_option("summaries", o.summaries, "summary.csv files")->required();
  report->add_option("--out-dir", o.out_dir, "Directory for pareto.csv and pareto.json");

  auto* fuse = app->add_subcommand("fuse", "Fuse rollout boxes read from a JSON file and print the result");
  fuse->add_option("--input", o.fuse_input, "JSON array of rollouts, each a list of [x1,y1,x2,y2]")
      ->required();
  fuse->add_option("--wbf-iou", o.wbf_iou, "IoU threshold at which fusion merges boxes");
  return app;
}

RunConfig resolve_run_config(const CliOptions& o) {
  RunConfig cfg;
  if (o.config) apply_config(cfg, read_config_file(*o.config));

  auto space = [](const std::string& v) {
    auto s = parse_coord_space(v);
    if (!s) throw ConfigError("bad coordinate space '" + v + "'");
    return *s;
  };
  if (o.dataset) cfg.dataset = *o.dataset;
  if (o.backend) cfg.backend = *o.backend == "http" ? BackendKind::kHttp : BackendKind::kOracle;
  if (o.backend_url) cfg.http.url = *o.backend_url;
  if (o.model) {
    cfg.http.model = *o.model;
    cfg.pipeline.model_name = *o.model;
  }
  if (o.resolution) {
    const auto crop_cap = cfg.pipeline.budget.crop_cap;
    try {
      cfg.pipeline.budget = ResolutionBudget::parse(*o.resolution);
    } catch (const std::exception&) {
      throw ConfigError("bad --resolution '" + *o.resolution + "'");
    }
    cfg.pipeline.budget.crop_cap = crop_cap;
  }
  if (o.crop_cap) cfg.pipeline.budget.crop_cap = *o.crop_cap;
  if (o.consistency) cfg.pipeline.consistency_n = *o.consistency;
  if (o.wbf_iou) cfg.pipeline.fusion.iou_threshold = *o.wbf_iou;
  if (o.temperature) cfg.pipeline.ird_temperature = *o.temperature;
  if (o.seed) cfg.pipeline.global_seed = *o.seed;
  if (o.workers) cfg.workers = *o.workers;
  if (o.out_dir) cfg.out_dir = *o.out_dir;
  if (o.modality) cfg.pipeline.modality = *parse_modality(*o.modality);
  if (o.prompt_set) cfg.pipeline.prompt_set = *o.prompt_set;
  if (o.point_side) cfg.pipeline.point_side = *o.point_side;
  if (o.box_space) {
    cfg.pipeline.box_space = space(*o.box_space);
    cfg.http.box_space = cfg.pipeline.box_space;
  }
  if (o.max_in_flight) cfg.pipeline.max_in_flight = *o.max_in_flight;
  if (o.native) cfg.pipeline.native = true;
  if (o.allow_missing_images) cfg.allow_missing_images = true;
  if (o.lenient) cfg.strict = false;
  if (o.timeout) cfg.http.timeout_s = *o.timeout;
  if (o.max_attempts) cfg.http.max_attempts = *o.max_attempts;
  if (o.oracle_sigma) cfg.oracle.sigma_frac = *o.oracle_sigma;
  if (o.oracle_p_floor) cfg.oracle.curve.p_floor = *o.oracle_p_floor;
  if (o.oracle_p_ceil) cfg.oracle.curve.p_ceil = *o.oracle_p_ceil;
  if (o.oracle_ramp_a) cfg.oracle.curve.a = *o.oracle_ramp_a;
  if (o.oracle_ramp_b) cfg.oracle.curve.b = *o.oracle_ramp_b;
  if (o.oracle_fidelity_px) cfg.oracle.fidelity_px = *o.oracle_fidelity_px;

  // The oracle follows the pipeline: same seed, same output family.
  cfg.oracle.seed = cfg.pipeline.global_seed;
  cfg.oracle.modality = cfg.pipeline.modality;
  if (cfg.pipeline.model_name.empty() && cfg.backend == BackendKind::kHttp) {
    cfg.pipeline.model_name = cfg.http.model;
  }
  cfg.validate();
  return cfg;
}

std::unique_ptr<Backend> default_backend(const RunConfig& cfg,
                                         std::span<const BenchmarkSample> samples) {
  if (cfg.backend == BackendKind::kHttp) {
    HttpBackendConfig http = cfg.http;
    if (const char* key = std::getenv("SPARC_API_KEY")) http.api_key = key;
    return std::make_unique<HttpBackend>(std::move(http));
  }
  std::vector<OracleTruth> truths;
  truths.reserve(samples.size());
  for (const auto& s : samples) {
    truths.push_back({s.sample_id, s.dims, s.gt_boxes, s.letters(), s.answer_letter});
  }
  return std::make_unique<OracleBackend>(cfg.oracle, std::move(truths));
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            const BackendFactory& factory) {
  CliOptions opts;
  auto app = make_app(opts);
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app->parse(reversed);
  } catch (const CLI::CallForHelp&) {
    const auto subs = app->get_subcommands();
    out << (subs.empty() ? app->help() : subs.front()->help());
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app->help("", CLI::AppFormatMode::All);
      return kExitOk;
    }
    err << "error: " << e.what() << "\n";
    return kExitFatal;
  }

  const auto* sub = app->get_subcommands().front();
  const std::string name = sub->get_name();
  try {
    if (name == "run") return cmd_run(opts, factory, out, err);
    if (name == "ablate") return cmd_ablate(opts, factory, out, err);
    if (name == "harvest") return cmd_harvest(opts, factory, out, err);
    if (name == "report") return cmd_report(opts, out);
    if (name == "fuse") return cmd_fuse(opts, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFatal;
  }
  err << "error: unknown subcommand '" << name << "'\n";
  return kExitFatal;
}

}  // namespace sparc
