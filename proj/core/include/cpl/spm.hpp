#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "cpl/autodiff.hpp"
#include "cpl/parameter.hpp"

namespace cpl {

/// How gradients reach the gate logits through the top-k weights.
enum class GateGradient {
  /// Exact derivative of the renormalized weights with the top-k mask held
  /// constant. Only retained logits receive gradient; at k = 1 the weight is
  /// identically 1, so the gate receives none.
  kRenormalized,
  /// Forward uses the renormalized top-k weights; backward uses the Jacobian
  /// of the dense softmax (straight-through), so every logit is trained.
  kStraightThrough,
};

struct SpmConfig {
  std::size_t experts = 5;
  std::size_t top_k = 1;
  std::size_t prompt_dim = 32;
  std::size_t feature_dim = 64;
  double expert_init_std = 0.02;
  GateGradient gate_gradient = GateGradient::kStraightThrough;

  void validate() const;
};

/// One routing outcome. Immutable snapshot for logging and analysis.
struct GateDecision {
  Tensor dense_probs;                 // softmax over all experts
  std::vector<std::size_t> retained;  // top-k indices, ascending
  Tensor sparse_weights;              // renormalized on `retained`, zero elsewhere
  double entropy_bits = 0.0;          // of dense_probs
  std::optional<std::size_t> forced;  // set by override_gate

  std::size_t argmax() const;
};

/// Shannon entropy in bits; zero-probability terms contribute nothing.
double entropy_bits(std::span<const double> probs);

/// Top-k selection: indices of the k largest logits, ties to the lowest index,
/// returned in ascending order.
std::vector<std::size_t> top_k_indices(std::span<const double> logits, std::size_t k);

/// Tape-free routing from logits (used for analysis and property tests).
GateDecision decide(const Tensor& logits, std::size_t k);

/// Forced one-hot decision for negative prompting. Throws ConfigError if
/// `index` is out of range or equals the positive (argmax) selection.
GateDecision override_gate(const GateDecision& decision, std::size_t index);

/// `m` distinct indices in [0, n) excluding `positive`, uniformly without
/// replacement. Throws ConfigError if m > n − 1.
std::vector<std::size_t> sample_negative_indices(std::size_t positive, std::size_t n,
                                                 std::size_t m, std::uint64_t seed);

/// Sparse Prompt Module: n learnable prompt experts plus the linear gate.
class PromptBank {
 public:
  PromptBank(SpmConfig config, std::uint64_t seed);

  const SpmConfig& config() const noexcept { return config_; }
  ParameterList& params() noexcept { return params_; }
  const ParameterList& params() const noexcept { return params_; }

  static constexpr std::size_t kExperts = 0;
  static constexpr std::size_t kGateWeight = 1;
  static constexpr std::size_t kGateBias = 2;

  struct Routed {
    GateDecision decision;
    Var weights;  // [1×n] sparse weights on the tape
  };

  /// z = W_g·x + b_g, dense softmax, top-k mask and renormalization. The
  /// mask is a constant of the tape; see GateGradient for the weight gradient.
  Routed gate(std::span<const Var> vars, Var features) const;

  /// p = Σ_i w_i e_i, returned as a [prompt_dim] vector.
  Var compose_prompt(std::span<const Var> vars, Var weights) const;
  /// Composition with constant weights (override decisions); gradients reach
  /// the experts only.
  Var compose_prompt(std::span<const Var> vars, const GateDecision& decision) const;

 private:
  SpmConfig config_;
  ParameterList params_;
};

void to_json(nlohmann::json& j, const GateDecision& d);

}  // namespace cpl
