#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpl/model.hpp"
#include "cpl/synth.hpp"
#include "cpl/trainer.hpp"

namespace cpl {

inline constexpr double kPsnrCap = 99.0;

/// 10·log10(1/MSE); returns kPsnrCap when MSE is zero or the value exceeds it.
double psnr(const Tensor& a, const Tensor& b);

/// Single-scale SSIM on the channel-mean grayscale image: 11×11 Gaussian
/// window (σ = 1.5), valid windows only, C1 = 0.01², C2 = 0.03².
double ssim(const Tensor& a, const Tensor& b);

/// 1×H×W channel mean.
Tensor to_gray(const Tensor& image);

/// One parsed gate-log line.
struct GateLogEntry {
  std::uint64_t step = 0;
  std::size_t sample = 0;
  Task task = Task::kNoise;
  std::vector<double> dense_probs;
  std::vector<std::size_t> retained;
  double entropy_bits = 0.0;
};

GateLogEntry gate_log_entry(Task task, const GateDecision& decision, std::uint64_t step = 0,
                            std::size_t sample = 0);
/// JSON lines as written by the trainer; IoError on malformed lines.
std::vector<GateLogEntry> read_gate_log(std::istream& in);
std::vector<GateLogEntry> read_gate_log(const std::filesystem::path& path);

/// Index of the largest probability, ties to the lowest index.
std::size_t argmax(std::span<const double> values);

struct EntropyStats {
  Task task = Task::kNoise;
  std::size_t count = 0;
  double mean_bits = 0.0;
  double stddev_bits = 0.0;  // population
};

/// Per-task entropy statistics in task order. ConfigError on an empty log.
std::vector<EntropyStats> entropy_report(std::span<const GateLogEntry> log);
std::string entropy_csv(std::span<const EntropyStats> stats);

struct SelectionMap {
  std::size_t experts = 0;
  std::vector<Task> tasks;
  /// choices[t][i]: argmax expert of the i-th logged sample of tasks[t].
  std::vector<std::vector<std::size_t>> choices;
  /// assignment[t][e]: selection frequency of expert e for tasks[t].
  std::vector<std::vector<double>> assignment;

  std::size_t dominant_expert(std::size_t task_row) const;
  double dominant_frequency(std::size_t task_row) const;
};

/// Uses the last `samples_per_task` entries of each task. ConfigError if a
/// task present in the log has fewer entries or the log is empty.
SelectionMap selection_map(std::span<const GateLogEntry> log, std::size_t samples_per_task = 100);

/// 1×S×(experts·cell) image: row i lights the cell of sample i's expert.
Tensor render_selection(std::span<const std::size_t> choices, std::size_t experts,
                        std::size_t cell = 4);

struct EvalSample {
  Tensor degraded;
  Tensor clean;
  Task task = Task::kNoise;
};

/// Deterministic held-out samples (no augmentation), `per_task` per task in
/// round-robin order, drawn from a stream disjoint from training batches.
std::vector<EvalSample> heldout_set(std::span<const Task> tasks, std::size_t per_task,
                                    std::size_t crop, std::uint64_t seed,
                                    const BatchOptions& options);

struct TaskEval {
  Task task = Task::kNoise;
  std::size_t samples = 0;
  double psnr_degraded = 0.0;
  double psnr_matched = 0.0;
  double psnr_vs_input = 0.0;  // restored against the degraded input
  double ssim_matched = 0.0;
  double l1_matched = 0.0;
  /// Mean PSNR with the gate forced onto expert e, over samples whose own
  /// selection is not e; empty when no sample qualifies.
  std::vector<std::optional<double>> psnr_forced;
  /// psnr_matched minus the best forced-mismatch mean.
  double min_gap = 0.0;
  double max_residual = 0.0;  // largest |matched − forced mismatch|
  double entropy_mean = 0.0;
  double entropy_std = 0.0;
  std::vector<double> assignment;
};

struct EvalReport {
  std::size_t experts = 0;
  std::size_t top_k = 0;
  std::size_t param_count = 0;
  std::uint64_t step = 0;
  std::vector<TaskEval> tasks;
  double mean_l1 = 0.0;
  nlohmann::json config;
};

struct EvalOptions {
  bool mismatch = true;
  /// When set, residual pixmaps for the first `residual_samples` samples per
  /// task are written here.
  std::optional<std::filesystem::path> residual_dir;
  std::size_t residual_samples = 2;
};

EvalReport evaluate(const CplModel& model, std::span<const EvalSample> samples,
                    const EvalOptions& options = {});

nlohmann::json to_json(const EvalReport& report);

struct ScalingRow {
  std::size_t experts = 0;
  std::size_t param_count = 0;
  std::size_t active_experts = 0;
};

/// Parameter count for each bank size with everything else fixed.
std::vector<ScalingRow> scaling_table(const ModelConfig& base, std::span<const std::size_t> experts);

}  // namespace cpl
