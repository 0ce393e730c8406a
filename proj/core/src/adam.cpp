#include "cpl/adam.hpp"

#include <cmath>
#include <string>

#include "cpl/error.hpp"

namespace cpl {

void Adam::update(std::span<Tensor* const> params, std::span<const Tensor> grads,
                  double lr_scale) {
  if (params.size() != grads.size()) {
    throw NumericError("adam: " + std::to_string(params.size()) + " parameters but " +
                       std::to_string(grads.size()) + " gradients");
  }
  if (m_.empty()) {
    for (Tensor* p : params) {
      m_.emplace_back(p->shape(), 0.0);
      v_.emplace_back(p->shape(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw NumericError("adam: parameter list changed size");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() || m_[i].shape() != grads[i].shape()) {
      throw NumericError("adam: shape mismatch for parameter " + std::to_string(i));
    }
    if (!grads[i].all_finite()) {
      throw NumericError("adam: non-finite gradient for parameter " + std::to_string(i));
    }
  }

  ++step_;
  const double t = static_cast<double>(step_);
  const double correction1 = 1.0 - std::pow(config_.beta1, t);
  const double correction2 = 1.0 - std::pow(config_.beta2, t);
  const double lr = config_.lr * lr_scale;
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* p = params[i]->raw();
    double* m = m_[i].raw();
    double* v = v_[i].raw();
    const double* g = grads[i].raw();
    for (std::size_t j = 0; j < grads[i].size(); ++j) {
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      p[j] -= lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

void Adam::restore(std::uint64_t step, std::vector<Tensor> m, std::vector<Tensor> v) {
  if (m.size() != v.size()) throw NumericError("adam: moment lists differ in length");
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i].shape() != v[i].shape()) throw NumericError("adam: moment shapes disagree");
  }
  step_ = step;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace cpl
