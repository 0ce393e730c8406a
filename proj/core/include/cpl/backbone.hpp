#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cpl/autodiff.hpp"
#include "cpl/parameter.hpp"

namespace cpl {

struct BackboneConfig {
  std::size_t base_channels = 16;
  std::size_t depth = 2;
  std::size_t prompt_dim = 32;
  std::size_t image_channels = 3;

  /// Channels at encoder stage s (0 = full resolution, depth = bottleneck).
  std::size_t stage_channels(std::size_t stage) const { return base_channels << stage; }
  std::size_t feature_dim() const { return stage_channels(depth); }
  /// Length of the prompt projection output (scale and shift per decoder stage).
  std::size_t modulation_dim() const;

  /// Throws ConfigError; `experts` is the prompt bank size.
  void validate(std::size_t experts) const;
};

/// Encoder output reused by every decode with the same input.
struct Encoded {
  Var input;
  std::vector<Var> skips;  // per stage, full resolution first
  Var features;            // global-average-pooled bottleneck, [feature_dim]
};

/// Small prompt-conditioned encoder–decoder with a residual output:
///
///   encoder: conv3×3+relu at full resolution, then per stage avgpool2 →
///            conv3×3+relu (channels double per stage);
///   decoder: bottleneck conv, then per stage upsample2 → conv3×3 → +skip;
///            every decoder stage is modulated by the prompt as
///            h·(1+γ(p)) + β(p) followed by relu;
///   head:    conv3×3 to image channels, zero-initialized, added to the input.
class Backbone {
 public:
  Backbone(BackboneConfig config, std::uint64_t seed);

  const BackboneConfig& config() const noexcept { return config_; }
  ParameterList& params() noexcept { return params_; }
  const ParameterList& params() const noexcept { return params_; }

  /// `vars` is params().bind(...) (or the backbone slice of a larger binding).
  Encoded encode(std::span<const Var> vars, Var image) const;
  Var decode(std::span<const Var> vars, const Encoded& encoded, Var prompt) const;
  Var restore(std::span<const Var> vars, Var image, Var prompt) const;

 private:
  struct ConvIndex {
    std::size_t weight = 0, bias = 0;
  };

  void check_image(const Shape& shape) const;

  BackboneConfig config_;
  ParameterList params_;
  std::vector<ConvIndex> encoder_;
  std::vector<ConvIndex> decoder_;  // bottleneck first, then towards full resolution
  ConvIndex head_;
  std::size_t proj_weight_ = 0, proj_bias_ = 0;
};

}  // namespace cpl
