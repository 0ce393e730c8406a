#include "cpl/model.hpp"

#include <cstring>

#include "cpl/error.hpp"
#include "cpl/rng.hpp"

namespace cpl {

namespace {

constexpr std::uint64_t kStreamBackbone = 11;
constexpr std::uint64_t kStreamBank = 12;
constexpr std::uint64_t kStreamPhi = 13;

}  // namespace

SpmConfig ModelConfig::spm() const {
  SpmConfig s;
  s.experts = experts;
  s.top_k = top_k;
  s.prompt_dim = backbone.prompt_dim;
  s.feature_dim = backbone.feature_dim();
  s.gate_gradient = gate_gradient;
  return s;
}

void ModelConfig::validate() const {
  spm().validate();
  backbone.validate(experts);
}

CplModel::CplModel(const ModelConfig& config)
    : config_((config.validate(), config)),
      backbone_(config.backbone, derive_seed(config.seed, kStreamBackbone)),
      bank_(config.spm(), derive_seed(config.seed, kStreamBank)),
      phi_(derive_seed(config.seed, kStreamPhi), config.backbone.image_channels) {}

std::vector<Parameter*> CplModel::parameters() {
  std::vector<Parameter*> out;
  for (auto& p : backbone_.params()) out.push_back(&p);
  for (auto& p : bank_.params()) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> CplModel::parameters() const {
  std::vector<const Parameter*> out;
  for (const auto& p : backbone_.params()) out.push_back(&p);
  for (const auto& p : bank_.params()) out.push_back(&p);
  return out;
}

std::size_t CplModel::param_count() const {
  return backbone_.params().scalar_count() + bank_.params().scalar_count();
}

CplModel::Bound CplModel::bind(Tape& tape, bool trainable) const {
  return {backbone_.params().bind(tape, trainable), bank_.params().bind(tape, trainable)};
}

CplModel::Forward CplModel::forward(const Bound& bound, Var degraded) const {
  Forward f;
  f.encoded = backbone_.encode(bound.backbone, degraded);
  f.routed = bank_.gate(bound.bank, f.encoded.features);
  f.prompt = bank_.compose_prompt(bound.bank, f.routed.weights);
  f.restored = backbone_.decode(bound.backbone, f.encoded, f.prompt);
  return f;
}

CplModel::Inference CplModel::restore(const Tensor& degraded) const {
  Tape tape;
  const Bound bound = bind(tape, false);
  Forward f = forward(bound, tape.constant(degraded));
  return {f.restored.value(), f.routed.decision};
}

Tensor CplModel::restore_forced(const Tensor& degraded, std::size_t expert) const {
  if (expert >= config_.experts) throw ConfigError("restore_forced: expert index out of range");
  Tape tape;
  const Bound bound = bind(tape, false);
  Encoded encoded = backbone_.encode(bound.backbone, tape.constant(degraded));
  Tensor onehot({config_.experts}, 0.0);
  onehot[expert] = 1.0;
  Var prompt = bank_.compose_prompt(bound.bank, tape.constant(onehot));
  return backbone_.decode(bound.backbone, encoded, prompt).value();
}

CplModel::Overrides CplModel::restore_with_overrides(const Tensor& degraded) const {
  Tape tape;
  const Bound bound = bind(tape, false);
  Forward f = forward(bound, tape.constant(degraded));
  Overrides out{{f.restored.value(), f.routed.decision}, {}};
  for (std::size_t e = 0; e < config_.experts; ++e) {
    Tensor onehot({config_.experts}, 0.0);
    onehot[e] = 1.0;
    Var prompt = bank_.compose_prompt(bound.bank, tape.constant(onehot));
    out.forced.push_back(backbone_.decode(bound.backbone, f.encoded, prompt).value());
  }
  return out;
}

std::uint64_t CplModel::phi_fingerprint() const {
  std::vector<Tensor> all = phi_.weights();
  all.insert(all.end(), phi_.biases().begin(), phi_.biases().end());
  return fingerprint(all);
}

std::uint64_t fingerprint(std::span<const Tensor> tensors) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Tensor& t : tensors) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.raw());
    for (std::size_t i = 0; i < t.size() * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace cpl
