#include "cpl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cpl/error.hpp"

namespace cpl {

double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / scale;
}

namespace {

double evaluate(const ScalarFn& f, const Tensor& point) {
  Tape tape;
  Var out = f(tape, tape.constant(point));
  if (!out.value().is_scalar()) {
    throw NumericError("fd_gradcheck: function is not scalar-valued, got " +
                       shape_str(out.shape()));
  }
  return out.item();
}

}  // namespace

GradcheckReport fd_gradcheck(const ScalarFn& f, const Tensor& point,
                             const GradcheckOptions& options) {
  Tensor analytic;
  double base = 0.0;
  {
    Tape tape;
    Var x = tape.variable(point);
    Var out = f(tape, x);
    if (!out.value().is_scalar()) {
      throw NumericError("fd_gradcheck: function is not scalar-valued, got " +
                         shape_str(out.shape()));
    }
    base = out.item();
    tape.backward(out);
    analytic = tape.grad(x);
  }

  std::vector<std::size_t> coords = options.coordinates;
  if (coords.empty()) {
    coords.resize(point.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
  }

  GradcheckReport report;
  Tensor probe = point;
  for (std::size_t idx : coords) {
    if (idx >= point.size()) throw NumericError("fd_gradcheck: coordinate out of range");
    const double original = probe[idx];
    auto central = [&](double h, double& plus, double& minus) {
      probe[idx] = original + h;
      plus = evaluate(f, probe);
      probe[idx] = original - h;
      minus = evaluate(f, probe);
      probe[idx] = original;
      return (plus - minus) / (2.0 * h);
    };
    double plus = 0.0, minus = 0.0;
    const double coarse = central(options.h, plus, minus);
    double numeric = coarse;
    bool kink = false;
    if (options.richardson) {
      double half_plus = 0.0, half_minus = 0.0;
      const double fine = central(options.h / 2.0, half_plus, half_minus);
      numeric = (4.0 * fine - coarse) / 3.0;
      // One-sided disagreement shrinks linearly with h for smooth functions
      // and stays constant across a derivative jump.
      const double spread = (plus + minus - 2.0 * base) / options.h;
      const double half_spread = (half_plus + half_minus - 2.0 * base) / (options.h / 2.0);
      const double scale = std::max({std::abs(coarse), std::abs(fine), 1e-8});
      kink = std::abs(coarse - fine) > options.kink_ratio * scale ||
             std::abs(half_spread - 0.5 * spread) > options.kink_ratio * scale;
    } else {
      const double forward = (plus - base) / options.h;
      const double backward = (base - minus) / options.h;
      const double scale = std::max({std::abs(forward), std::abs(backward), 1e-8});
      kink = std::abs(forward - backward) > options.kink_ratio * scale;
    }
    if (options.skip_kinks && kink) {
      ++report.skipped;
      continue;
    }
    const double err = relative_error(analytic[idx], numeric);
    ++report.checked;
    if (err >= report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_coordinate = idx;
      report.analytic_at_worst = analytic[idx];
      report.numeric_at_worst = numeric;
    }
  }
  return report;
}

}  // namespace cpl
