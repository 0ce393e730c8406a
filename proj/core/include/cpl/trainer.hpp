#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "cpl/adam.hpp"
#include "cpl/model.hpp"
#include "cpl/rng.hpp"
#include "cpl/synth.hpp"

namespace cpl {

enum class LrSchedule { kConstant, kCosine };

struct TrainConfig {
  std::vector<Task> tasks = {Task::kNoise, Task::kRain, Task::kLowlight};
  std::size_t steps = 200;
  std::size_t batch_size = 8;
  std::size_t crop = 32;
  std::size_t image_size = 48;
  double lr = 2e-4;
  LrSchedule lr_schedule = LrSchedule::kConstant;
  double alpha = 0.01;
  std::size_t experts = 5;
  std::size_t top_k = 1;
  std::size_t negatives = 4;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::size_t log_every = 1;
  bool augment = true;
  bool stop_positive_in_neg = true;
  double neg_margin = 0.0;
  GateGradient gate_gradient = GateGradient::kStraightThrough;
  BackboneConfig backbone;
  DegradationRanges ranges;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  ModelConfig model_config() const;
  CprConfig cpr_config() const;
  BatchOptions batch_options() const;
  double lr_scale(std::uint64_t step) const;
};

/// Everything needed to continue training bit-identically.
struct TrainState {
  explicit TrainState(const TrainConfig& config);

  TrainConfig config;
  CplModel model;
  Adam adam;
  std::uint64_t step = 0;
  Rng rng;
  std::uint64_t phi_fingerprint = 0;
};

struct StepResult {
  CprTerms terms;  // batch means
  std::vector<GateDecision> decisions;
  std::vector<Task> tasks;
};

/// One iteration of contrastive prompt training on `batch`: per sample
/// encode → gate → compose → positive restore → m negatives → loss terms,
/// then the batch-mean loss is back-propagated and Adam takes one step.
/// Throws NumericError naming the offending term if any loss is non-finite.
StepResult train_step(TrainState& state, std::span<const SampleTriple> batch,
                      std::uint64_t negative_seed);

/// Reference update with only the ℓ1 pixel loss (no perceptual terms).
void l1_train_step(TrainState& state, std::span<const SampleTriple> batch);

/// Batch and negative-sampling seeds for the next step (advances state.rng).
struct StepSeeds {
  std::uint64_t batch = 0;
  std::uint64_t negatives = 0;
};
StepSeeds next_step_seeds(TrainState& state);

struct LoopOutputs {
  std::ostream* metrics = nullptr;   // JSON lines
  std::ostream* gate_log = nullptr;  // JSON lines, one per sample
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints written
  /// Stop after this many steps in total (for interrupt tests); 0 = config.steps.
  std::size_t stop_after = 0;
};

/// Runs until config.steps (or stop_after). Writes metrics every log_every
/// steps and checkpoints every checkpoint_every steps plus a final
/// `final.ckpt`. I/O failures raise IoError carrying the step number.
void train_loop(TrainState& state, const LoopOutputs& outputs);

nlohmann::json metrics_record(std::uint64_t step, const StepResult& result,
                              std::size_t experts);
nlohmann::json gate_record(std::uint64_t step, std::size_t sample, Task task,
                           const GateDecision& decision);

}  // namespace cpl
