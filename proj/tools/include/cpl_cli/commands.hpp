#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cpl/config.hpp"

namespace cpl::cli {

/// Reads a run config, applying the seed precedence --seed > config "seed" >
/// CPL_SEED > 0.
RunConfig resolve_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed);

struct GenDataArgs {
  std::filesystem::path config;
  std::filesystem::path out;
  std::size_t count = 0;
  std::optional<std::uint64_t> seed;
};
/// Writes <out>/manifest.jsonl and one degraded/clean raw-tensor pair per sample.
void gen_data(const GenDataArgs& args, std::ostream& log);

struct TrainArgs {
  std::filesystem::path config;
  std::optional<std::filesystem::path> resume;
  std::optional<std::size_t> steps;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::size_t stop_after = 0;  // simulated interruption; 0 = run to completion
};
/// Writes effective_config.json, metrics.jsonl, gates.jsonl and checkpoints/
/// under the output directory. A resumed run appends to the logs.
void train(const TrainArgs& args, std::ostream& log);

struct EvalArgs {
  std::filesystem::path checkpoint;
  std::optional<std::filesystem::path> data;
  std::size_t synthetic = 0;  // held-out samples per task when no --data
  bool mismatch = false;
  std::filesystem::path out = "eval";
  std::optional<std::uint64_t> seed;
};
/// Writes report.json; with mismatch also residuals/*.ppm.
void eval(const EvalArgs& args, std::ostream& log);

struct GateReportArgs {
  std::filesystem::path log;
  std::filesystem::path out = "gate_report";
  std::size_t samples_per_task = 100;
};
/// Writes entropy.csv, assignment.json and selection_<task>.pgm.
void gate_report(const GateReportArgs& args, std::ostream& log);

struct GradCheckArgs {
  std::string scope = "op";  // linear | op | end2end
  std::size_t trials = 20;
  std::uint64_t seed = 0;
  bool inject_fault = false;
};
/// Returns true iff every relative error is within tolerance.
bool grad_check(const GradCheckArgs& args, std::ostream& log);

/// Full command line entry point; returns the process exit code.
int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

}  // namespace cpl::cli
