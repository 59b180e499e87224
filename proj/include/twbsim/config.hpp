#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "twbsim/experiment.hpp"

namespace twbsim::config {

inline constexpr int kSchemaVersion = 1;

/// Conditioning defaults carried by the run configuration.
struct ConditioningConfig {
  int arm = 1;          ///< conditioning arm, 1 (signal) or 2 (idler)
  int chain = 0;        ///< index into the chain list
  int scan_index = 0;   ///< which scan point the conditioning run uses
};

/// Everything a command needs: the experiment plus output and conditioning
/// settings. Loaded from a schema-validated JSON file; unknown keys are
/// rejected so typos fail loudly instead of silently using defaults.
struct RunConfig {
  experiment::ExperimentConfig exp;
  std::string out_dir = "out";
  ConditioningConfig conditioning;
};

/// Parses and validates a run configuration file. Throws ConfigError with a
/// path-qualified diagnostic on any schema violation.
RunConfig load_run_config(const std::string& path);

/// Parses a configuration from an already-loaded JSON document.
RunConfig parse_run_config(const nlohmann::json& doc);

/// The fully resolved configuration (defaults filled in), embedded in every
/// JSON output as the audit trail.
nlohmann::ordered_json resolved_config_json(const RunConfig& cfg);

}  // namespace twbsim::config
