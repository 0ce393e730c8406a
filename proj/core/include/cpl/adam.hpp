#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cpl/tensor.hpp"

namespace cpl {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam. Moment buffers are created on the first update and
/// are aligned index-for-index with the parameter list passed to `update`.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// One step over all parameters. `lr_scale` multiplies the base rate (for
  /// schedules). Throws NumericError on count/shape mismatch or non-finite grads.
  void update(std::span<Tensor* const> params, std::span<const Tensor> grads,
              double lr_scale = 1.0);

  const AdamConfig& config() const noexcept { return config_; }
  std::uint64_t step() const noexcept { return step_; }
  const std::vector<Tensor>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor>& second_moments() const noexcept { return v_; }

  /// Restores state saved from another instance (checkpoint resume).
  void restore(std::uint64_t step, std::vector<Tensor> m, std::vector<Tensor> v);

 private:
  AdamConfig config_;
  std::uint64_t step_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace cpl
