#include "sparc/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <utility>

#include <CLI11.hpp>
#include <json.hpp>

namespace sparc {

namespace {

using nlohmann::json;

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& expected) {
  throw ConfigError("config key '" + key + "': expected " + expected + ", got '" + value + "'");
}

int as_int(const std::string& key, const std::string& v) {
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

std::uint64_t as_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "an unsigned integer");
  return out;
}

double as_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) bad_value(key, v, "a number");
  return d;
}

bool as_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

CoordSpace as_space(const std::string& key, const std::string& v) {
  if (auto s = parse_coord_space(v)) return *s;
  bad_value(key, v, "pixel, norm_1000 or percent");
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& v)>;

const std::vector<std::pair<std::string, Setter>>& setters() {
  static const std::vector<std::pair<std::string, Setter>> table = {
      {"run.dataset", [](RunConfig& c, auto&, auto& v) { c.dataset = v; }},
      {"run.out_dir", [](RunConfig& c, auto&, auto& v) { c.out_dir = v; }},
      {"run.workers", [](RunConfig& c, auto& k, auto& v) { c.workers = as_int(k, v); }},
      {"run.strict", [](RunConfig& c, auto& k, auto& v) { c.strict = as_bool(k, v); }},
      {"run.allow_missing_images",
       [](RunConfig& c, auto& k, auto& v) { c.allow_missing_images = as_bool(k, v); }},

      {"pipeline.resolution",
       [](RunConfig& c, auto& k, auto& v) {
         const auto crop_cap = c.pipeline.budget.crop_cap;
         try {
           c.pipeline.budget = ResolutionBudget::parse(v);
         } catch (const std::exception&) {
           bad_value(k, v, "a positive integer or \"full\"");
         }
         c.pipeline.budget.crop_cap = crop_cap;
       }},
      {"pipeline.crop_cap",
       [](RunConfig& c, auto& k, auto& v) { c.pipeline.budget.crop_cap = as_int(k, v); }},
      {"pipeline.consistency",
       [](RunConfig& c, auto& k, auto& v) { c.pipeline.consistency_n = as_int(k, v); }},
      {"pipeline.temperature",
       [](RunConfig& c, auto& k, auto& v) { c.pipeline.ird_temperature = as_double(k, v); }},
      {"pipeline.wbf_iou",
       [](RunConfig& c, auto& k, auto& v) { c.pipeline.fusion.iou_threshold = as_double(k, v); }},
      {"pipeline.modality",
       [](RunConfig& c, auto& k, auto& v) {
         auto m = parse_modality(v);
         if (!m) bad_value(k, v, "box or point");
         c.pipeline.modality = *m;
       }},
      {"pipeline.point_side",
       [](RunConfig& c, auto& k, auto& v) { c.pipeline.point_side = as_int(k, v); }},
      {"pipeline.patch",
       [](RunConfig& c, auto& k, auto& v) { c.pipeline.patch.patch_px = as_int(k, v); }},
      {"pipeline.seed",
       [](RunConfig& c, auto& k, auto& v) { c.pipeline.global_seed = as_u64(k, v); }},
      {"pipeline.prompt_set", [](RunConfig& c, auto&, auto& v) { c.pipeline.prompt_set = v; }},
      {"pipeline.box_space",
       [](RunConfig& c, auto& k, auto& v) { c.pipeline.box_space = as_space(k, v); }},
      {"pipeline.point_space",
       [](RunConfig& c, auto& k, auto& v) { c.pipeline.point_space = as_space(k, v); }},
      {"pipeline.max_in_flight",
       [](RunConfig& c, auto& k, auto& v) { c.pipeline.max_in_flight = as_int(k, v); }},
      {"pipeline.ird_max_tokens",
       [](RunConfig& c, auto& k, auto& v) { c.pipeline.ird_max_tokens = as_int(k, v); }},
      {"pipeline.reasoning_max_tokens",
       [](RunConfig& c, auto& k, auto& v) { c.pipeline.reasoning_max_tokens = as_int(k, v); }},
      {"pipeline.native",
       [](RunConfig& c, auto& k, auto& v) { c.pipeline.native = as_bool(k, v); }},

      {"backend.kind",
       [](RunConfig& c, auto& k, auto& v) {
         if (v == "oracle") {
           c.backend = BackendKind::kOracle;
         } else if (v == "http") {
           c.backend = BackendKind::kHttp;
         } else {
           bad_value(k, v, "oracle or http");
         }
       }},
      {"backend.url", [](RunConfig& c, auto&, auto& v) { c.http.url = v; }},
      {"backend.model",
       [](RunConfig& c, auto&, auto& v) {
         c.http.model = v;
         c.pipeline.model_name = v;
       }},
      {"backend.timeout_s",
       [](RunConfig& c, auto& k, auto& v) { c.http.timeout_s = as_double(k, v); }},
      {"backend.max_attempts",
       [](RunConfig& c, auto& k, auto& v) { c.http.max_attempts = as_int(k, v); }},
      {"backend.backoff_ms",
       [](RunConfig& c, auto& k, auto& v) { c.http.backoff_initial_ms = as_int(k, v); }},
      {"backend.box_space",
       [](RunConfig& c, auto& k, auto& v) { c.http.box_space = as_space(k, v); }},

      {"oracle.sigma_frac",
       [](RunConfig& c, auto& k, auto& v) { c.oracle.sigma_frac = as_double(k, v); }},
      {"oracle.reference_temperature",
       [](RunConfig& c, auto& k, auto& v) { c.oracle.reference_temperature = as_double(k, v); }},
      {"oracle.p_floor",
       [](RunConfig& c, auto& k, auto& v) { c.oracle.curve.p_floor = as_double(k, v); }},
      {"oracle.p_ceil",
       [](RunConfig& c, auto& k, auto& v) { c.oracle.curve.p_ceil = as_double(k, v); }},
      {"oracle.ramp_a", [](RunConfig& c, auto& k, auto& v) { c.oracle.curve.a = as_double(k, v); }},
      {"oracle.ramp_b", [](RunConfig& c, auto& k, auto& v) { c.oracle.curve.b = as_double(k, v); }},
      {"oracle.fidelity_px",
       [](RunConfig& c, auto& k, auto& v) { c.oracle.fidelity_px = as_double(k, v); }},
  };
  return table;
}

std::string scalar_text(const std::string& key, const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number_float()) return v.dump();
  throw ConfigError("config key '" + key + "' must be a scalar");
}

}  // namespace

std::string_view to_string(BackendKind kind) {
  return kind == BackendKind::kOracle ? "oracle" : "http";
}

void RunConfig::validate() const {
  if (workers < 1) throw ConfigError("workers must be >= 1");
  try {
    pipeline.validate();
    if (backend == BackendKind::kOracle) {
      oracle.validate();
    } else {
      http.validate();
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

ConfigEntries parse_json_config(const std::string& text) {
  const json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("config is not valid JSON");
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  ConfigEntries out;
  for (const auto& [section, body] : doc.items()) {
    if (!body.is_object()) {
      throw ConfigError("config section '" + section + "' must be an object");
    }
    for (const auto& [key, value] : body.items()) {
      const std::string full = section + "." + key;
      out[full] = scalar_text(full, value);
    }
  }
  return out;
}

ConfigEntries parse_toml_config(const std::string& text) {
  std::istringstream in(text);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_config(in);
  } catch (const CLI::Error& e) {
    throw ConfigError(std::string("config is not valid TOML: ") + e.what());
  }
  ConfigEntries out;
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    if (item.parents.size() != 1) {
      throw ConfigError("config key '" + item.fullname() + "' must sit in one section");
    }
    if (item.inputs.size() != 1) {
      throw ConfigError("config key '" + item.fullname() + "' must be a scalar");
    }
    out[item.parents.front() + "." + item.name] = item.inputs.front();
  }
  return out;
}

ConfigEntries read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    if (path.extension() == ".json") return parse_json_config(buf.str());
    return parse_toml_config(buf.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void apply_config(RunConfig& cfg, const ConfigEntries& entries) {
  const auto& table = setters();
  for (const auto& [key, value] : entries) {
    auto it = std::find_if(table.begin(), table.end(),
                           [&](const auto& entry) { return entry.first == key; });
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(cfg, key, value);
  }
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& [key, setter] : setters()) out.push_back(key);
    return out;
  }();
  return keys;
}

}  // namespace sparc
