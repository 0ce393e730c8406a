#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cpl/autodiff.hpp"
#include "cpl/backbone.hpp"
#include "cpl/spm.hpp"

namespace cpl {

/// Frozen random convolutional feature extractor used as the perceptual
/// distance: three stages of conv3×3 → relu → avgpool2 with 3→8→16→32
/// channels. Weights are fixed by the seed and are only ever bound to a tape
/// as constants, so gradients reach the image but never the weights.
class PerceptualExtractor {
 public:
  explicit PerceptualExtractor(std::uint64_t seed, std::size_t image_channels = 3);

  Var features(Var image) const;
  Tensor features(const Tensor& image) const;

  const std::vector<Tensor>& weights() const noexcept { return weights_; }
  const std::vector<Tensor>& biases() const noexcept { return biases_; }

 private:
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
};

struct CprConfig {
  double alpha = 0.01;
  /// Treat φ(I_r⁺) as a constant target inside L_neg.
  bool stop_positive_in_neg = true;
  /// Optional cap on each negative distance (0 disables).
  double neg_margin = 0.0;
};

/// Values of every loss term for one sample (or a batch mean).
struct CprTerms {
  double l_pos = 0.0;
  double l_neg = 0.0;
  double l_cpr = 0.0;
  double l_pixel = 0.0;
  double total = 0.0;
  double alpha = 0.0;
};

/// ‖φ(I_r⁺) − φ(I_gt)‖² as a mean over feature elements.
Var loss_pos(const PerceptualExtractor& phi, Var restored, Var target);
/// Mean over negatives of ‖φ(I⁻) − φ(I_r⁺)‖² (element means). Throws
/// ConfigError on an empty list.
Var loss_neg(const PerceptualExtractor& phi, std::span<const Var> negatives, Var positive,
             const CprConfig& config = {});

struct Negatives {
  std::vector<std::size_t> indices;
  std::vector<Var> images;
};

/// Mismatched reconstructions: for each of m sampled experts j ≠ argmax, the
/// decoder is run with the prompt of a forced one-hot gate at j.
Negatives build_negatives(const Backbone& backbone, std::span<const Var> backbone_vars,
                          const PromptBank& bank, std::span<const Var> bank_vars,
                          const Encoded& encoded, const GateDecision& decision, std::size_t m,
                          std::uint64_t seed);

struct CprLoss {
  Var total;
  CprTerms terms;
};

/// L = L_pixel + α·(L_pos − L_neg). With α = 0 the contrastive terms are
/// still evaluated for logging but are not connected to `total`.
CprLoss total_loss(const PerceptualExtractor& phi, Var positive, Var ground_truth,
                   std::span<const Var> negatives, const CprConfig& config);

}  // namespace cpl
