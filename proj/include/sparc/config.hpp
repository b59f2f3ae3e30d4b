#pragma once

// Run configuration: pipeline settings, backend choice and oracle
// parameters, loaded from a TOML or JSON file. Both formats use the same
// sections and keys (see README); unknown keys are rejected.

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include "sparc/http_backend.hpp"
#include "sparc/oracle_backend.hpp"
#include "sparc/pipeline.hpp"

namespace sparc {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class BackendKind { kOracle, kHttp };

std::string_view to_string(BackendKind kind);

struct RunConfig {
  PipelineConfig pipeline;
  BackendKind backend = BackendKind::kOracle;
  HttpBackendConfig http;
  OracleConfig oracle;
  std::string dataset;
  std::string out_dir = "out";
  int workers = 1;
  bool strict = true;
  bool allow_missing_images = false;

  void validate() const;
};

// "section.key" -> scalar value as text.
using ConfigEntries = std::map<std::string, std::string>;

ConfigEntries parse_json_config(const std::string& text);
ConfigEntries parse_toml_config(const std::string& text);

// Picks the format from the extension (.json, else TOML). Throws
// ConfigError naming the file on read or syntax errors.
ConfigEntries read_config_file(const std::filesystem::path& path);

// Applies entries on top of cfg. Throws ConfigError on an unknown key or a
// bad value, naming the key.
void apply_config(RunConfig& cfg, const ConfigEntries& entries);

// Every accepted "section.key".
const std::vector<std::string>& config_keys();

}  // namespace sparc
