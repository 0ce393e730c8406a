#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cpl/backbone.hpp"
#include "cpl/cpr.hpp"
#include "cpl/spm.hpp"

namespace cpl {

struct ModelConfig {
  BackboneConfig backbone;
  std::size_t experts = 5;
  std::size_t top_k = 1;
  GateGradient gate_gradient = GateGradient::kStraightThrough;
  std::uint64_t seed = 0;

  SpmConfig spm() const;
  void validate() const;
};

/// Backbone, prompt bank and the frozen perceptual extractor.
class CplModel {
 public:
  explicit CplModel(const ModelConfig& config);

  const ModelConfig& config() const noexcept { return config_; }
  Backbone& backbone() noexcept { return backbone_; }
  const Backbone& backbone() const noexcept { return backbone_; }
  PromptBank& bank() noexcept { return bank_; }
  const PromptBank& bank() const noexcept { return bank_; }
  const PerceptualExtractor& phi() const noexcept { return phi_; }

  /// Learnable tensors in checkpoint order: backbone first, then the bank.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t param_count() const;

  struct Bound {
    std::vector<Var> backbone;
    std::vector<Var> bank;
  };
  Bound bind(Tape& tape, bool trainable) const;

  struct Forward {
    Encoded encoded;
    PromptBank::Routed routed;
    Var prompt;
    Var restored;
  };
  /// Encode → gate → compose → decode for one C×H×W image.
  Forward forward(const Bound& bound, Var degraded) const;

  struct Inference {
    Tensor restored;
    GateDecision decision;
  };
  Inference restore(const Tensor& degraded) const;
  /// Restoration with the gate forced one-hot onto `expert`.
  Tensor restore_forced(const Tensor& degraded, std::size_t expert) const;

  struct Overrides {
    Inference matched;
    std::vector<Tensor> forced;  // forced[e]: gate forced one-hot onto e
  };
  /// Matched restoration plus every one-hot override from a single encode.
  Overrides restore_with_overrides(const Tensor& degraded) const;

  /// Fingerprint of the frozen extractor weights.
  std::uint64_t phi_fingerprint() const;

 private:
  ModelConfig config_;
  Backbone backbone_;
  PromptBank bank_;
  PerceptualExtractor phi_;
};

/// FNV-1a over the bytes of a tensor sequence.
std::uint64_t fingerprint(std::span<const Tensor> tensors);

}  // namespace cpl
