#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "cpl/trainer.hpp"

namespace cpl {

/// Contents of a run configuration file.
struct RunConfig {
  TrainConfig train;
  std::string output_dir = "run";
};

/// Full effective configuration with every default resolved.
nlohmann::json to_json(const TrainConfig& config);
nlohmann::json to_json(const RunConfig& config);

/// Strict parse: unknown keys and type errors raise ConfigError naming the
/// key path. Missing keys keep their defaults. The result is validated.
TrainConfig parse_train_config(const nlohmann::json& j);
RunConfig parse_run_config(const nlohmann::json& j);

/// Reads and parses a JSON file; IoError if unreadable, ConfigError if malformed.
RunConfig load_run_config(const std::filesystem::path& path);

std::string gate_gradient_name(GateGradient mode);
GateGradient parse_gate_gradient(const std::string& name);

}  // namespace cpl
