#include "cpl/trainer.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <ostream>
#include <string>

#include "cpl/checkpoint.hpp"
#include "cpl/error.hpp"

namespace cpl {

namespace {

constexpr std::uint64_t kStreamTrainer = 21;

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

void check_finite(const CprTerms& t, std::uint64_t step, std::size_t sample) {
  const std::pair<const char*, double> named[] = {
      {"l_pixel", t.l_pixel}, {"l_pos", t.l_pos}, {"l_neg", t.l_neg},
      {"l_cpr", t.l_cpr},     {"total", t.total}};
  for (const auto& [name, value] : named) {
    if (!std::isfinite(value)) {
      throw NumericError("non-finite " + std::string(name) + " at step " + std::to_string(step) +
                         ", sample " + std::to_string(sample));
    }
  }
}

std::vector<Tensor*> param_tensors(CplModel& model) {
  std::vector<Tensor*> out;
  for (Parameter* p : model.parameters()) out.push_back(&p->value);
  return out;
}

std::vector<Tensor> zero_grads(const CplModel& model) {
  std::vector<Tensor> out;
  for (const Parameter* p : model.parameters()) out.emplace_back(p->value.shape(), 0.0);
  return out;
}

void accumulate(std::vector<Tensor>& into, const Tape& tape, const CplModel::Bound& bound) {
  std::size_t i = 0;
  for (const auto* list : {&bound.backbone, &bound.bank}) {
    for (const Var& v : *list) {
      const Tensor g = tape.grad(v);
      for (std::size_t j = 0; j < g.size(); ++j) into[i][j] += g[j];
      ++i;
    }
  }
}

void apply_update(TrainState& state, std::vector<Tensor>& grads, std::size_t batch) {
  const double inv = 1.0 / static_cast<double>(batch);
  for (auto& g : grads)
    for (auto& v : g.data()) v *= inv;
  std::vector<Tensor*> params = param_tensors(state.model);
  state.adam.update(params, grads, state.config.lr_scale(state.step));
  ++state.step;
  if (state.model.phi_fingerprint() != state.phi_fingerprint) {
    throw NumericError("frozen perceptual extractor changed during training");
  }
}

}  // namespace

void TrainConfig::validate() const {
  require(!tasks.empty(), "tasks: at least one task is required");
  require(batch_size >= 1, "batch_size: must be positive");
  require(crop >= kMinCleanSize / 2 && crop <= image_size, "crop: must lie in [8, image_size]");
  require(image_size >= kMinCleanSize, "image_size: must be at least 16");
  require(lr > 0.0, "lr: must be positive");
  require(alpha >= 0.0, "alpha: must be non-negative");
  require(experts >= 1, "experts: must be positive");
  require(top_k >= 1 && top_k <= experts, "top_k: must lie in [1, experts]");
  require(negatives + 1 <= experts, "negatives: must not exceed experts - 1");
  require(log_every >= 1, "log_every: must be positive");
  require(neg_margin >= 0.0, "neg_margin: must be non-negative");
  const std::size_t factor = std::size_t{1} << std::min<std::size_t>(backbone.depth, 16);
  require(crop % factor == 0, "crop: must be divisible by 2^depth");
  require(crop >= 8 * 1 && crop % 8 == 0, "crop: the perceptual extractor needs a multiple of 8");
  backbone.validate(experts);
  ranges.validate();
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig m;
  m.backbone = backbone;
  m.experts = experts;
  m.top_k = top_k;
  m.gate_gradient = gate_gradient;
  m.seed = seed;
  return m;
}

CprConfig TrainConfig::cpr_config() const {
  return {alpha, stop_positive_in_neg, neg_margin};
}

BatchOptions TrainConfig::batch_options() const {
  BatchOptions o;
  o.image_size = image_size;
  o.augment = augment;
  o.ranges = ranges;
  return o;
}

double TrainConfig::lr_scale(std::uint64_t step) const {
  if (lr_schedule == LrSchedule::kConstant || steps == 0) return 1.0;
  const double progress = static_cast<double>(step) / static_cast<double>(steps);
  return 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

TrainState::TrainState(const TrainConfig& cfg)
    : config((cfg.validate(), cfg)),
      model(cfg.model_config()),
      adam(AdamConfig{cfg.lr}),
      rng(derive_seed(cfg.seed, kStreamTrainer)),
      phi_fingerprint(model.phi_fingerprint()) {}

StepSeeds next_step_seeds(TrainState& state) {
  StepSeeds s;
  s.batch = state.rng.next_u64();
  s.negatives = state.rng.next_u64();
  return s;
}

StepResult train_step(TrainState& state, std::span<const SampleTriple> batch,
                      std::uint64_t negative_seed) {
  if (batch.empty()) throw ConfigError("train_step: empty batch");
  const CplModel& model = state.model;
  const CprConfig cpr = state.config.cpr_config();
  std::vector<Tensor> grads = zero_grads(model);
  StepResult result;
  CprTerms& sum = result.terms;
  sum.alpha = cpr.alpha;

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const SampleTriple& sample = batch[i];
    Tape tape;
    const CplModel::Bound bound = model.bind(tape, true);
    const CplModel::Forward f = model.forward(bound, tape.constant(sample.degraded));
    const Negatives negatives = build_negatives(
        model.backbone(), bound.backbone, model.bank(), bound.bank, f.encoded, f.routed.decision,
        state.config.negatives, derive_seed(negative_seed, i));
    const CprLoss loss = total_loss(model.phi(), f.restored, tape.constant(sample.clean),
                                    negatives.images, cpr);
    check_finite(loss.terms, state.step, i);
    tape.backward(loss.total);
    accumulate(grads, tape, bound);

    sum.l_pixel += loss.terms.l_pixel;
    sum.l_pos += loss.terms.l_pos;
    sum.l_neg += loss.terms.l_neg;
    sum.l_cpr += loss.terms.l_cpr;
    sum.total += loss.terms.total;
    result.decisions.push_back(f.routed.decision);
    result.tasks.push_back(sample.task);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  sum.l_pixel *= inv;
  sum.l_pos *= inv;
  sum.l_neg *= inv;
  sum.l_cpr *= inv;
  sum.total *= inv;

  apply_update(state, grads, batch.size());
  return result;
}

void l1_train_step(TrainState& state, std::span<const SampleTriple> batch) {
  if (batch.empty()) throw ConfigError("l1_train_step: empty batch");
  const CplModel& model = state.model;
  std::vector<Tensor> grads = zero_grads(model);
  for (const SampleTriple& sample : batch) {
    Tape tape;
    const CplModel::Bound bound = model.bind(tape, true);
    const CplModel::Forward f = model.forward(bound, tape.constant(sample.degraded));
    Var loss = l1_mean(sub(f.restored, tape.constant(sample.clean)));
    tape.backward(loss);
    accumulate(grads, tape, bound);
  }
  apply_update(state, grads, batch.size());
}

nlohmann::json metrics_record(std::uint64_t step, const StepResult& result, std::size_t experts) {
  double entropy = 0.0;
  std::map<std::string, std::vector<std::size_t>> histogram;
  for (std::size_t i = 0; i < result.decisions.size(); ++i) {
    entropy += result.decisions[i].entropy_bits;
    auto& counts = histogram[std::string(task_name(result.tasks[i]))];
    counts.resize(experts, 0);
    ++counts[result.decisions[i].argmax()];
  }
  if (!result.decisions.empty()) entropy /= static_cast<double>(result.decisions.size());
  return nlohmann::json{{"step", step},
                        {"l_pixel", result.terms.l_pixel},
                        {"l_pos", result.terms.l_pos},
                        {"l_neg", result.terms.l_neg},
                        {"l_cpr", result.terms.l_cpr},
                        {"total", result.terms.total},
                        {"alpha", result.terms.alpha},
                        {"mean_entropy_bits", entropy},
                        {"gate_argmax_histogram", histogram}};
}

nlohmann::json gate_record(std::uint64_t step, std::size_t sample, Task task,
                           const GateDecision& decision) {
  nlohmann::json j = decision;
  j["step"] = step;
  j["sample"] = sample;
  j["task"] = std::string(task_name(task));
  return j;
}

void train_loop(TrainState& state, const LoopOutputs& outputs) {
  const TrainConfig& cfg = state.config;
  const std::size_t last = outputs.stop_after ? std::min(outputs.stop_after, cfg.steps) : cfg.steps;
  auto write_checkpoint = [&](const std::filesystem::path& path) {
    try {
      save_checkpoint(state, path);
    } catch (const IoError& e) {
      throw IoError("step " + std::to_string(state.step) + ": " + e.what());
    }
  };

  while (state.step < last) {
    const StepSeeds seeds = next_step_seeds(state);
    const std::vector<SampleTriple> batch =
        make_batch(cfg.tasks, cfg.batch_size, cfg.crop, seeds.batch, cfg.batch_options());
    const std::uint64_t step = state.step;
    const StepResult result = train_step(state, batch, seeds.negatives);

    if (state.step % cfg.log_every == 0 || state.step == cfg.steps) {
      if (outputs.metrics != nullptr) {
        *outputs.metrics << metrics_record(step, result, cfg.experts).dump() << '\n';
        if (!*outputs.metrics) throw IoError("step " + std::to_string(step) + ": metrics write failed");
      }
      if (outputs.gate_log != nullptr) {
        for (std::size_t i = 0; i < result.decisions.size(); ++i) {
          *outputs.gate_log << gate_record(step, i, result.tasks[i], result.decisions[i]).dump()
                            << '\n';
        }
        if (!*outputs.gate_log) throw IoError("step " + std::to_string(step) + ": gate log write failed");
      }
    }
    if (!outputs.checkpoint_dir.empty() && cfg.checkpoint_every > 0 &&
        state.step % cfg.checkpoint_every == 0) {
      write_checkpoint(outputs.checkpoint_dir /
                       ("step_" + std::to_string(state.step) + ".ckpt"));
    }
  }
  if (!outputs.checkpoint_dir.empty()) write_checkpoint(outputs.checkpoint_dir / "final.ckpt");
}

}  // namespace cpl
