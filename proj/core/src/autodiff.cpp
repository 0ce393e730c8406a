#include "cpl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "cpl/error.hpp"

namespace cpl {

const Tensor& Var::value() const {
  if (tape_ == nullptr) throw NumericError("use of an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ != nullptr && tape_->requires_grad(id_); }

void Tape::check_open(const char* what) const {
  if (consumed_) throw NumericError(std::string(what) + ": tape already consumed by backward");
}

Var Tape::constant(Tensor value) { return record("constant", std::move(value), {}, nullptr); }

Var Tape::variable(Tensor value) {
  Var v = record("variable", std::move(value), {}, nullptr);
  nodes_[v.id_].requires_grad = true;
  return v;
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Var> parents, BackwardFn fn) {
  check_open("record");
  if (!value.all_finite()) {
    throw NumericError("non-finite value produced by " + std::string(op));
  }
  bool needs_grad = false;
  for (const Var& p : parents) {
    if (p.tape_ != this) throw NumericError(std::string(op) + ": operand from a different tape");
    needs_grad = needs_grad || nodes_[p.id_].requires_grad;
  }
  Node node;
  node.value = std::move(value);
  node.requires_grad = needs_grad;
  if (needs_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor* Tape::grad_slot(Var v) {
  Node& node = nodes_[v.id_];
  if (!node.requires_grad) return nullptr;
  if (!node.has_grad) {
    node.grad = Tensor(node.value.shape(), 0.0);
    node.has_grad = true;
  }
  return &node.grad;
}

void Tape::backward(Var loss) {
  check_open("backward");
  if (loss.tape_ != this) throw NumericError("backward: loss belongs to a different tape");
  if (!loss.value().is_scalar()) {
    throw NumericError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  consumed_ = true;
  if (!nodes_[loss.id_].requires_grad) return;
  grad_slot(loss)->fill(1.0);
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.has_grad || !node.backward) continue;
    node.backward(*this, node.grad);
  }
}

Tensor Tape::grad(Var v) const {
  if (v.tape_ != this) throw NumericError("grad: Var belongs to a different tape");
  const Node& node = nodes_[v.id_];
  if (node.has_grad) return node.grad;
  return Tensor(node.value.shape(), 0.0);
}

namespace {

Tape& tape_of(Var a, Var b) {
  if (!a.valid() || !b.valid() || &a.tape() != &b.tape()) {
    throw NumericError("operands must live on the same tape");
  }
  return a.tape();
}

enum class Broadcast { kNone, kLeftScalar, kRightScalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (b.is_scalar()) return Broadcast::kRightScalar;
  if (a.is_scalar()) return Broadcast::kLeftScalar;
  throw NumericError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

// Adds `g * factor` into the slot for `target`, summing if `target` was broadcast.
void scatter(Tape& tape, Var target, const Tensor& g, double factor, bool reduce_to_scalar) {
  Tensor* slot = tape.grad_slot(target);
  if (slot == nullptr) return;
  if (reduce_to_scalar && slot->size() == 1 && g.size() != 1) {
    double total = 0.0;
    for (double v : g.data()) total += v;
    (*slot)[0] += factor * total;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) (*slot)[i] += factor * g[i];
}

}  // namespace

Var add(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  const Broadcast kind = broadcast_kind(a.value(), b.value(), "add");
  const Tensor& big = kind == Broadcast::kLeftScalar ? b.value() : a.value();
  Tensor out = big;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = (kind == Broadcast::kLeftScalar ? a.value()[0] : a.value()[i]) +
             (kind == Broadcast::kRightScalar ? b.value()[0] : b.value()[i]);
  }
  return tape.record("add", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    scatter(t, a, g, 1.0, true);
    scatter(t, b, g, 1.0, true);
  });
}

Var sub(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  const Broadcast kind = broadcast_kind(a.value(), b.value(), "sub");
  const Tensor& big = kind == Broadcast::kLeftScalar ? b.value() : a.value();
  Tensor out = big;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = (kind == Broadcast::kLeftScalar ? a.value()[0] : a.value()[i]) -
             (kind == Broadcast::kRightScalar ? b.value()[0] : b.value()[i]);
  }
  return tape.record("sub", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    scatter(t, a, g, 1.0, true);
    scatter(t, b, g, -1.0, true);
  });
}

Var mul(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  const Broadcast kind = broadcast_kind(a.value(), b.value(), "mul");
  const std::size_t n = std::max(a.value().size(), b.value().size());
  Tensor out = kind == Broadcast::kLeftScalar ? b.value() : a.value();
  auto av = [kind, a](std::size_t i) {
    return kind == Broadcast::kLeftScalar ? a.value()[0] : a.value()[i];
  };
  auto bv = [kind, b](std::size_t i) {
    return kind == Broadcast::kRightScalar ? b.value()[0] : b.value()[i];
  };
  for (std::size_t i = 0; i < n; ++i) out[i] = av(i) * bv(i);
  return tape.record("mul", std::move(out), {a, b}, [a, b, kind, n](Tape& t, const Tensor& g) {
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (Tensor* ga = t.grad_slot(a)) {
      for (std::size_t i = 0; i < n; ++i) {
        const double contrib = g[i] * (kind == Broadcast::kRightScalar ? y[0] : y[i]);
        (*ga)[kind == Broadcast::kLeftScalar ? 0 : i] += contrib;
      }
    }
    if (Tensor* gb = t.grad_slot(b)) {
      for (std::size_t i = 0; i < n; ++i) {
        const double contrib = g[i] * (kind == Broadcast::kLeftScalar ? x[0] : x[i]);
        (*gb)[kind == Broadcast::kRightScalar ? 0 : i] += contrib;
      }
    }
  });
}

Var add(Var a, double b) {
  Tensor out = a.value();
  for (auto& v : out.data()) v += b;
  return a.tape().record("add_scalar", std::move(out), {a},
                         [a](Tape& t, const Tensor& g) { scatter(t, a, g, 1.0, false); });
}

Var mul(Var a, double b) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= b;
  return a.tape().record("mul_scalar", std::move(out), {a},
                         [a, b](Tape& t, const Tensor& g) { scatter(t, a, g, b, false); });
}

Var relu(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return a.tape().record("relu", std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_slot(a);
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) (*ga)[i] += g[i];
    }
  });
}

Var power(Var a, double exponent) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = std::pow(v, exponent);
  return a.tape().record("power", std::move(out), {a}, [a, exponent](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_slot(a);
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      (*ga)[i] += g[i] * exponent * std::pow(x[i], exponent - 1.0);
    }
  });
}

Var clip(Var a, double lo, double hi) {
  if (lo > hi) throw NumericError("clip: lower bound exceeds upper bound");
  Tensor out = a.value();
  for (auto& v : out.data()) v = std::clamp(v, lo, hi);
  return a.tape().record("clip", std::move(out), {a}, [a, lo, hi](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_slot(a);
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] >= lo && x[i] <= hi) (*ga)[i] += g[i];
    }
  });
}

Var min_with(Var a, double cap) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = std::min(v, cap);
  return a.tape().record("min_with", std::move(out), {a}, [a, cap](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_slot(a);
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] < cap) (*ga)[i] += g[i];
    }
  });
}

Var matmul(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0)) {
    throw NumericError("matmul: incompatible shapes " + shape_str(x.shape()) + " and " +
                       shape_str(y.shape()));
  }
  const std::size_t m = x.dim(0), k = x.dim(1), n = y.dim(1);
  Tensor out({m, n});
  kernels::gemm(x.raw(), y.raw(), out.raw(), m, k, n);
  return tape.record("matmul", std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_slot(a)) kernels::gemm_a_bt(g.raw(), b.value().raw(), ga->raw(), m, n, k);
    if (Tensor* gb = t.grad_slot(b)) kernels::gemm_at_b(a.value().raw(), g.raw(), gb->raw(), k, m, n);
  });
}

namespace {

Var conv2d_impl(Var input, Var kernels, const Var* bias, std::size_t stride,
                kernels::Padding padding) {
  Tape& tape = tape_of(input, kernels);
  const kernels::ConvGeometry g =
      kernels::conv_geometry(input.shape(), kernels.shape(), stride, padding);
  if (bias != nullptr) {
    if (&bias->tape() != &tape) throw NumericError("conv2d: bias on a different tape");
    if (bias->value().size() != g.out_channels) {
      throw NumericError("conv2d: bias length does not match output channels");
    }
  }
  auto cols = std::make_shared<std::vector<double>>(g.patch() * g.out_pixels());
  kernels::im2col(input.value().raw(), g, cols->data());
  Tensor out({g.out_channels, g.out_h, g.out_w});
  if (bias != nullptr) {
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      std::fill_n(out.raw() + o * g.out_pixels(), g.out_pixels(), bias->value()[o]);
    }
  }
  kernels::gemm(kernels.value().raw(), cols->data(), out.raw(), g.out_channels, g.patch(),
                g.out_pixels(), bias != nullptr);

  std::vector<Var> parents{input, kernels};
  Var bias_var = bias != nullptr ? *bias : Var{};
  if (bias != nullptr) parents.push_back(*bias);
  return tape.record(
      "conv2d", std::move(out), std::move(parents),
      [input, kernels, bias_var, g, cols](Tape& t, const Tensor& grad) {
        const std::size_t pixels = g.out_pixels();
        if (Tensor* gk = t.grad_slot(kernels)) {
          kernels::gemm_a_bt(grad.raw(), cols->data(), gk->raw(), g.out_channels, pixels,
                             g.patch());
        }
        if (Tensor* gi = t.grad_slot(input)) {
          std::vector<double> dcols(g.patch() * pixels, 0.0);
          kernels::gemm_at_b(kernels.value().raw(), grad.raw(), dcols.data(), g.patch(),
                             g.out_channels, pixels);
          kernels::col2im_add(dcols.data(), g, gi->raw());
        }
        if (bias_var.valid()) {
          if (Tensor* gb = t.grad_slot(bias_var)) {
            for (std::size_t o = 0; o < g.out_channels; ++o) {
              double total = 0.0;
              const double* row = grad.raw() + o * pixels;
              for (std::size_t p = 0; p < pixels; ++p) total += row[p];
              (*gb)[o] += total;
            }
          }
        }
      });
}

}  // namespace

Var conv2d(Var input, Var kernels, Var bias, std::size_t stride, kernels::Padding padding) {
  return conv2d_impl(input, kernels, &bias, stride, padding);
}

Var conv2d(Var input, Var kernels, std::size_t stride, kernels::Padding padding) {
  return conv2d_impl(input, kernels, nullptr, stride, padding);
}

Var softmax(Var logits) {
  Tensor out = kernels::softmax(logits.value());
  Tensor probs = out;
  return logits.tape().record(
      "softmax", std::move(out), {logits}, [logits, probs](Tape& t, const Tensor& g) {
        Tensor* gl = t.grad_slot(logits);
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * probs[i];
        for (std::size_t i = 0; i < g.size(); ++i) (*gl)[i] += probs[i] * (g[i] - dot);
      });
}

namespace {

void require_non_empty(const Tensor& a, const char* op) {
  if (a.empty()) throw NumericError(std::string(op) + ": empty tensor");
}

}  // namespace

Var sum(Var a) {
  require_non_empty(a.value(), "sum");
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return a.tape().record("sum", Tensor::scalar(total), {a}, [a](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_slot(a);
    for (auto& v : ga->data()) v += g[0];
  });
}

Var mean(Var a) {
  require_non_empty(a.value(), "mean");
  const double n = static_cast<double>(a.value().size());
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return a.tape().record("mean", Tensor::scalar(total / n), {a}, [a, n](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_slot(a);
    const double share = g[0] / n;
    for (auto& v : ga->data()) v += share;
  });
}

Var l1_mean(Var a) {
  require_non_empty(a.value(), "l1_mean");
  const double n = static_cast<double>(a.value().size());
  double total = 0.0;
  for (double v : a.value().data()) total += std::abs(v);
  return a.tape().record("l1_mean", Tensor::scalar(total / n), {a},
                         [a, n](Tape& t, const Tensor& g) {
                           Tensor* ga = t.grad_slot(a);
                           const Tensor& x = a.value();
                           const double share = g[0] / n;
                           for (std::size_t i = 0; i < x.size(); ++i) {
                             if (x[i] > 0.0) (*ga)[i] += share;
                             else if (x[i] < 0.0) (*ga)[i] -= share;
                           }
                         });
}

Var l2_sq_mean(Var a) {
  require_non_empty(a.value(), "l2_sq_mean");
  const double n = static_cast<double>(a.value().size());
  double total = 0.0;
  for (double v : a.value().data()) total += v * v;
  return a.tape().record("l2_sq_mean", Tensor::scalar(total / n), {a},
                         [a, n](Tape& t, const Tensor& g) {
                           Tensor* ga = t.grad_slot(a);
                           const Tensor& x = a.value();
                           const double share = 2.0 * g[0] / n;
                           for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += share * x[i];
                         });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape().record("reshape", std::move(out), {a},
                         [a](Tape& t, const Tensor& g) { scatter(t, a, g, 1.0, false); });
}

Var slice(Var a, std::size_t offset, std::size_t length) {
  const Tensor& x = a.value();
  if (length == 0 || offset + length > x.size()) {
    throw NumericError("slice: range [" + std::to_string(offset) + ", " +
                       std::to_string(offset + length) + ") out of bounds for " +
                       shape_str(x.shape()));
  }
  Tensor out({length}, std::vector<double>(x.data().begin() + static_cast<std::ptrdiff_t>(offset),
                                           x.data().begin() +
                                               static_cast<std::ptrdiff_t>(offset + length)));
  return a.tape().record("slice", std::move(out), {a},
                         [a, offset, length](Tape& t, const Tensor& g) {
                           Tensor* ga = t.grad_slot(a);
                           for (std::size_t i = 0; i < length; ++i) (*ga)[offset + i] += g[i];
                         });
}

Var detach(Var a) { return a.tape().constant(a.value()); }

Var avg_pool2(Var a) {
  Tensor out = kernels::avg_pool2(a.value());
  return a.tape().record("avg_pool2", std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_slot(a);
    const std::size_t c = g.dim(0), h = g.dim(1), w = g.dim(2);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double share = 0.25 * g.at(ch, y, x);
          ga->at(ch, 2 * y, 2 * x) += share;
          ga->at(ch, 2 * y, 2 * x + 1) += share;
          ga->at(ch, 2 * y + 1, 2 * x) += share;
          ga->at(ch, 2 * y + 1, 2 * x + 1) += share;
        }
  });
}

Var upsample2(Var a) {
  Tensor out = kernels::upsample2(a.value());
  return a.tape().record("upsample2", std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_slot(a);
    const std::size_t c = g.dim(0), h = g.dim(1), w = g.dim(2);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) ga->at(ch, y / 2, x / 2) += g.at(ch, y, x);
  });
}

Var global_avg_pool(Var a) {
  const Tensor& x = a.value();
  if (x.rank() != 3) throw NumericError("global_avg_pool: need C×H×W");
  const std::size_t c = x.dim(0), pixels = x.dim(1) * x.dim(2);
  Tensor out({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double total = 0.0;
    for (std::size_t p = 0; p < pixels; ++p) total += x[ch * pixels + p];
    out[ch] = total / static_cast<double>(pixels);
  }
  return a.tape().record("global_avg_pool", std::move(out), {a},
                         [a, c, pixels](Tape& t, const Tensor& g) {
                           Tensor* ga = t.grad_slot(a);
                           for (std::size_t ch = 0; ch < c; ++ch) {
                             const double share = g[ch] / static_cast<double>(pixels);
                             for (std::size_t p = 0; p < pixels; ++p) (*ga)[ch * pixels + p] += share;
                           }
                         });
}

Var modulate(Var x, Var scale, Var shift) {
  Tape& tape = tape_of(x, scale);
  tape_of(x, shift);
  const Tensor& v = x.value();
  if (v.rank() != 3 || scale.value().size() != v.dim(0) || shift.value().size() != v.dim(0)) {
    throw NumericError("modulate: scale/shift must have one entry per channel of " +
                       shape_str(v.shape()));
  }
  const std::size_t c = v.dim(0), pixels = v.dim(1) * v.dim(2);
  Tensor out = v;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double s = 1.0 + scale.value()[ch], b = shift.value()[ch];
    double* row = out.raw() + ch * pixels;
    for (std::size_t p = 0; p < pixels; ++p) row[p] = row[p] * s + b;
  }
  return tape.record("modulate", std::move(out), {x, scale, shift},
                     [x, scale, shift, c, pixels](Tape& t, const Tensor& g) {
                       const Tensor& v = x.value();
                       Tensor* gx = t.grad_slot(x);
                       Tensor* gs = t.grad_slot(scale);
                       Tensor* gb = t.grad_slot(shift);
                       for (std::size_t ch = 0; ch < c; ++ch) {
                         const double s = 1.0 + scale.value()[ch];
                         const double* grow = g.raw() + ch * pixels;
                         const double* vrow = v.raw() + ch * pixels;
                         double ds = 0.0, db = 0.0;
                         for (std::size_t p = 0; p < pixels; ++p) {
                           ds += grow[p] * vrow[p];
                           db += grow[p];
                         }
                         if (gx != nullptr) {
                           double* xrow = gx->raw() + ch * pixels;
                           for (std::size_t p = 0; p < pixels; ++p) xrow[p] += grow[p] * s;
                         }
                         if (gs != nullptr) (*gs)[ch] += ds;
                         if (gb != nullptr) (*gb)[ch] += db;
                       }
                     });
}

}  // namespace cpl
