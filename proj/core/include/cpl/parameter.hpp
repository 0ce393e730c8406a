#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cpl/autodiff.hpp"
#include "cpl/rng.hpp"
#include "cpl/tensor.hpp"

namespace cpl {

struct Parameter {
  std::string name;
  Tensor value;
};

/// Ordered, named collection of learnable tensors. Order is stable and
/// defines the layout of optimizer state and checkpoints.
class ParameterList {
 public:
  std::size_t add(std::string name, Tensor value);

  std::size_t size() const noexcept { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  /// Index of `name`; throws ConfigError if absent.
  std::size_t index_of(const std::string& name) const;
  std::size_t scalar_count() const;

  /// Leaves on `tape` for every parameter, in order; variables when
  /// `trainable`, constants otherwise.
  std::vector<Var> bind(Tape& tape, bool trainable) const;

 private:
  std::vector<Parameter> params_;
};

/// He-normal conv kernel Cout×Cin×k×k (std sqrt(2 / (Cin·k·k))).
Tensor he_conv(std::size_t out_channels, std::size_t in_channels, std::size_t k, Rng& rng);
Tensor gaussian(Shape shape, double stddev, Rng& rng);

}  // namespace cpl
