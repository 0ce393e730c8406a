#include "cpl/cpr.hpp"

#include "cpl/error.hpp"
#include "cpl/kernels.hpp"
#include "cpl/rng.hpp"

namespace cpl {

namespace {

constexpr std::size_t kStageChannels[] = {8, 16, 32};

}  // namespace

PerceptualExtractor::PerceptualExtractor(std::uint64_t seed, std::size_t image_channels) {
  Rng rng(seed);
  std::size_t in = image_channels;
  for (std::size_t out : kStageChannels) {
    weights_.push_back(he_conv(out, in, 3, rng));
    biases_.push_back(gaussian({out}, 0.01, rng));
    in = out;
  }
}

Var PerceptualExtractor::features(Var image) const {
  if (image.shape().size() != 3 || image.shape()[0] != weights_.front().dim(1)) {
    throw NumericError("phi: image shape " + shape_str(image.shape()) + " does not match extractor");
  }
  Tape& tape = image.tape();
  Var h = image;
  for (std::size_t s = 0; s < weights_.size(); ++s) {
    h = relu(conv2d(h, tape.constant(weights_[s]), tape.constant(biases_[s])));
    h = avg_pool2(h);
  }
  return h;
}

Tensor PerceptualExtractor::features(const Tensor& image) const {
  Tensor h = image;
  for (std::size_t s = 0; s < weights_.size(); ++s) {
    h = kernels::conv2d(h, weights_[s], &biases_[s], 1, kernels::Padding::kSame);
    for (auto& v : h.data()) v = v > 0.0 ? v : 0.0;
    h = kernels::avg_pool2(h);
  }
  return h;
}

Var loss_pos(const PerceptualExtractor& phi, Var restored, Var target) {
  if (restored.shape() != target.shape()) {
    throw NumericError("loss_pos: shape mismatch " + shape_str(restored.shape()) + " vs " +
                       shape_str(target.shape()));
  }
  return l2_sq_mean(sub(phi.features(restored), phi.features(target)));
}

namespace {

Var neg_term(Var negative_features, Var anchor, const CprConfig& config) {
  Var d = l2_sq_mean(sub(negative_features, anchor));
  return config.neg_margin > 0.0 ? min_with(d, config.neg_margin) : d;
}

Var neg_from_features(const PerceptualExtractor& phi, std::span<const Var> negatives, Var anchor,
                      const CprConfig& config) {
  if (negatives.empty()) throw ConfigError("loss_neg: empty negative list");
  Var total = neg_term(phi.features(negatives[0]), anchor, config);
  for (std::size_t i = 1; i < negatives.size(); ++i) {
    total = add(total, neg_term(phi.features(negatives[i]), anchor, config));
  }
  return mul(total, 1.0 / static_cast<double>(negatives.size()));
}

}  // namespace

Var loss_neg(const PerceptualExtractor& phi, std::span<const Var> negatives, Var positive,
             const CprConfig& config) {
  if (negatives.empty()) throw ConfigError("loss_neg: empty negative list");
  for (const Var& n : negatives) {
    if (n.shape() != positive.shape()) throw NumericError("loss_neg: shape mismatch");
  }
  Var anchor = phi.features(config.stop_positive_in_neg ? detach(positive) : positive);
  return neg_from_features(phi, negatives, anchor, config);
}

Negatives build_negatives(const Backbone& backbone, std::span<const Var> backbone_vars,
                          const PromptBank& bank, std::span<const Var> bank_vars,
                          const Encoded& encoded, const GateDecision& decision, std::size_t m,
                          std::uint64_t seed) {
  Negatives out;
  out.indices =
      sample_negative_indices(decision.argmax(), bank.config().experts, m, seed);
  for (std::size_t j : out.indices) {
    const GateDecision forced = override_gate(decision, j);
    Var prompt = bank.compose_prompt(bank_vars, forced);
    out.images.push_back(backbone.decode(backbone_vars, encoded, prompt));
  }
  return out;
}

CprLoss total_loss(const PerceptualExtractor& phi, Var positive, Var ground_truth,
                   std::span<const Var> negatives, const CprConfig& config) {
  if (positive.shape() != ground_truth.shape()) {
    throw NumericError("total_loss: positive and ground truth differ in shape");
  }
  CprLoss out;
  out.terms.alpha = config.alpha;

  Var pixel = l1_mean(sub(positive, ground_truth));
  Var pos_features = phi.features(positive);
  Var gt_features = phi.features(detach(ground_truth));
  Var l_pos = l2_sq_mean(sub(pos_features, gt_features));
  Var l_cpr = l_pos;
  if (!negatives.empty()) {
    Var anchor = config.stop_positive_in_neg ? detach(pos_features) : pos_features;
    Var l_neg = neg_from_features(phi, negatives, anchor, config);
    out.terms.l_neg = l_neg.item();
    l_cpr = sub(l_pos, l_neg);
  }
  out.terms.l_pixel = pixel.item();
  out.terms.l_pos = l_pos.item();
  out.terms.l_cpr = l_cpr.item();

  if (config.alpha == 0.0) {
    out.total = pixel;
  } else {
    out.total = add(pixel, mul(l_cpr, config.alpha));
  }
  out.terms.total = out.total.item();
  return out;
}

}  // namespace cpl
