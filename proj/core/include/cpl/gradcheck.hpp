#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "cpl/autodiff.hpp"

namespace cpl {

/// Scalar-valued function of one tensor, built on the supplied tape.
using ScalarFn = std::function<Var(Tape&, Var)>;

struct GradcheckOptions {
  double h = 1e-5;
  /// Flat indices to probe; empty probes every coordinate.
  std::vector<std::size_t> coordinates;
  /// Skip coordinates where the one-sided differences disagree, i.e. the
  /// probe interval straddles a non-differentiable point (relu kink, top-k
  /// switch). Disagreement is measured relative to the gradient scale.
  bool skip_kinks = false;
  double kink_ratio = 1e-4;
  /// Richardson extrapolation (4·D(h/2) − D(h))/3 of the central difference
  /// D. With skip_kinks, a coordinate is skipped when D(h) and D(h/2)
  /// disagree, or when the one-sided spread fails to halve with h, by more
  /// than kink_ratio relative.
  bool richardson = false;
};

struct GradcheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_coordinate = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

/// |a − n| / max(|a|, |n|, 1e-8).
double relative_error(double analytic, double numeric);

/// Compares tape gradients of `f` at `point` with central differences
/// D(h) = (f(x+h) − f(x−h)) / 2h. Throws NumericError if `f` is not scalar.
GradcheckReport fd_gradcheck(const ScalarFn& f, const Tensor& point,
                             const GradcheckOptions& options = {});

}  // namespace cpl
