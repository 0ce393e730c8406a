#pragma once

#include <cstddef>
#include <functional>
#include <string_view>
#include <vector>

#include "cpl/kernels.hpp"
#include "cpl/tensor.hpp"

namespace cpl {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  double item() const { return value().item(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Append-only record of operations for reverse-mode differentiation.
///
/// Nodes are stored in creation order, which is a valid topological order, so
/// `backward` simply walks the list in reverse. Gradients of nodes that feed
/// several consumers are summed. A tape supports exactly one backward pass;
/// afterwards only gradient reads are allowed.
class Tape {
 public:
  /// Receives the gradient flowing into the node and scatters it to parents.
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf whose gradient is collected by `backward`.
  Var variable(Tensor value);

  /// Records an op result. Throws NumericError (naming `op`) if the value is
  /// not finite. `fn` is dropped when no parent requires a gradient.
  Var record(std::string_view op, Tensor value, std::vector<Var> parents, BackwardFn fn);

  void backward(Var loss);

  /// Gradient of `v` after backward; zeros if nothing reached it.
  Tensor grad(Var v) const;
  bool consumed() const noexcept { return consumed_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient accumulator for a parent during backward, or null if that
  /// parent does not take gradients. Allocated zeroed on first use.
  Tensor* grad_slot(Var v);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };

  void check_open(const char* what) const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Differentiable ops. Binary elementwise ops accept equal shapes or a
// one-element operand broadcast against the other.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add(Var a, double b);
Var mul(Var a, double b);
Var relu(Var a);
Var power(Var a, double exponent);
/// Zero gradient outside [lo, hi].
Var clip(Var a, double lo, double hi);
/// Elementwise min(a, cap); used for an optional loss margin.
Var min_with(Var a, double cap);

Var matmul(Var a, Var b);
Var conv2d(Var input, Var kernels, Var bias, std::size_t stride = 1,
           kernels::Padding padding = kernels::Padding::kSame);
Var conv2d(Var input, Var kernels, std::size_t stride = 1,
           kernels::Padding padding = kernels::Padding::kSame);
Var softmax(Var logits);

Var sum(Var a);
Var mean(Var a);
Var l1_mean(Var a);
Var l2_sq_mean(Var a);

Var reshape(Var a, Shape shape);
/// Contiguous range [offset, offset+length) of the flattened value, as a vector.
Var slice(Var a, std::size_t offset, std::size_t length);
/// Constant copy; gradients stop here.
Var detach(Var a);

Var avg_pool2(Var a);
Var upsample2(Var a);
/// C×H×W → [C] channel means.
Var global_avg_pool(Var a);
/// x·(1+scale_c) + shift_c for C×H×W input and [C] scale/shift.
Var modulate(Var x, Var scale, Var shift);

}  // namespace cpl
