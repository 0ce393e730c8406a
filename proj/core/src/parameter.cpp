#include "cpl/parameter.hpp"

#include <cmath>

#include "cpl/error.hpp"

namespace cpl {

std::size_t ParameterList::add(std::string name, Tensor value) {
  params_.push_back({std::move(name), std::move(value)});
  return params_.size() - 1;
}

std::size_t ParameterList::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  throw ConfigError("no parameter named '" + name + "'");
}

std::size_t ParameterList::scalar_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.value.size();
  return total;
}

std::vector<Var> ParameterList::bind(Tape& tape, bool trainable) const {
  std::vector<Var> vars;
  vars.reserve(params_.size());
  for (const auto& p : params_) {
    vars.push_back(trainable ? tape.variable(p.value) : tape.constant(p.value));
  }
  return vars;
}

Tensor gaussian(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

Tensor he_conv(std::size_t out_channels, std::size_t in_channels, std::size_t k, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(in_channels * k * k));
  return gaussian({out_channels, in_channels, k, k}, stddev, rng);
}

}  // namespace cpl
