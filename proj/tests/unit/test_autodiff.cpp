#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "cpl/autodiff.hpp"
#include "cpl/error.hpp"
#include "cpl/gradcheck.hpp"
#include "cpl_cli/gradcheck_suite.hpp"
#include "support.hpp"

namespace cpl {
namespace {

TEST(Autodiff, MatmulExample) {
  Tape t;
  Var a = t.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  Var b = t.constant(Tensor::matrix(2, 1, {1, 1}));
  EXPECT_EQ(matmul(a, b).value(), Tensor::matrix(2, 1, {3, 7}));
}

TEST(Autodiff, SharedNodeGradientsAreSummed) {
  Tape t;
  Var x = t.variable(Tensor::vector({3.0}));
  Var y = add(mul(x, x), x);  // x² + x
  t.backward(sum(y));
  EXPECT_DOUBLE_EQ(t.grad(x)[0], 7.0);
}

TEST(Autodiff, BackwardOnlyOnce) {
  Tape t;
  Var x = t.variable(Tensor::vector({1.0}));
  Var y = sum(x);
  t.backward(y);
  EXPECT_TRUE(t.consumed());
  EXPECT_THROW(t.backward(y), NumericError);
  EXPECT_THROW(t.variable(Tensor::vector({1.0})), NumericError);
}

TEST(Autodiff, BackwardRequiresScalar) {
  Tape t;
  Var x = t.variable(Tensor::vector({1.0, 2.0}));
  EXPECT_THROW(t.backward(mul(x, 2.0)), NumericError);
}

TEST(Autodiff, NonFiniteValuesAreRejectedWithOpName) {
  Tape t;
  Var x = t.variable(Tensor::vector({std::numeric_limits<double>::max()}));
  try {
    mul(x, 10.0);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("mul"), std::string::npos);
  }
}

TEST(Autodiff, DetachAndConstantsGetNoGradient) {
  Tape t;
  Var x = t.variable(Tensor::vector({2.0}));
  Var c = t.constant(Tensor::vector({5.0}));
  Var y = add(mul(detach(x), x), mul(c, x));
  t.backward(sum(y));
  EXPECT_DOUBLE_EQ(t.grad(x)[0], 2.0 + 5.0);
  EXPECT_DOUBLE_EQ(t.grad(c)[0], 0.0);
  EXPECT_FALSE(c.requires_grad());
}

TEST(Autodiff, OneElementBroadcast) {
  Tape t;
  Var a = t.variable(Tensor::vector({1, 2, 3}));
  Var s = t.variable(Tensor::vector({2}));
  t.backward(sum(mul(a, s)));
  EXPECT_DOUBLE_EQ(t.grad(s)[0], 6.0);
  EXPECT_EQ(t.grad(a), Tensor::vector({2, 2, 2}));
  Tape u;
  EXPECT_THROW(add(u.constant(Tensor::vector({1, 2})), u.constant(Tensor::vector({1, 2, 3}))),
               NumericError);
}

TEST(Autodiff, ClipHasZeroGradientOutsideBounds) {
  Tape t;
  Var x = t.variable(Tensor::vector({-2, 0.5, 2}));
  t.backward(sum(clip(x, -1, 1)));
  EXPECT_EQ(t.grad(x), Tensor::vector({0, 1, 0}));
}

TEST(Autodiff, ReductionsOfKnownValues) {
  Tape t;
  Var x = t.variable(Tensor::vector({1, -3}));
  EXPECT_DOUBLE_EQ(l1_mean(x).item(), 2.0);
  EXPECT_DOUBLE_EQ(l2_sq_mean(x).item(), 5.0);
  EXPECT_DOUBLE_EQ(mean(x).item(), -1.0);
}

TEST(Autodiff, ModulateDefinition) {
  Tape t;
  Var x = t.constant(Tensor({2, 1, 2}, std::vector<double>{1, 2, 3, 4}));
  Var s = t.constant(Tensor::vector({0.5, -1}));
  Var b = t.constant(Tensor::vector({1, 2}));
  const Tensor y = modulate(x, s, b).value();
  EXPECT_EQ(y, Tensor({2, 1, 2}, std::vector<double>{2.5, 4, 2, 2}));
}

TEST(Autodiff, LinearOpsGradcheckToRoundOff) {
  for (const auto& r : cli::linear_checks(3)) {
    EXPECT_LT(r.report.max_rel_error, 1e-10) << r.name;
    EXPECT_GT(r.report.checked, 0u) << r.name;
  }
}

TEST(Autodiff, AllOpsGradcheck) {
  for (const auto& r : cli::op_checks(4)) {
    EXPECT_LE(r.report.max_rel_error, cli::kGradcheckTolerance) << r.name;
  }
}

TEST(Autodiff, CorruptedRuleIsDetected) {
  EXPECT_GT(cli::corrupted_fixture_check(0).report.max_rel_error, cli::kGradcheckTolerance);
}

TEST(Gradcheck, RelativeErrorFloor) {
  EXPECT_DOUBLE_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(0.0, 1e-10), 1e-10 / 1e-8);
}

TEST(Gradcheck, RejectsNonScalar) {
  const ScalarFn f = [](Tape&, Var x) { return mul(x, 2.0); };
  EXPECT_THROW(fd_gradcheck(f, Tensor::vector({1, 2})), NumericError);
}

TEST(Gradcheck, SkipsKinks) {
  const ScalarFn f = [](Tape&, Var x) { return sum(relu(x)); };
  GradcheckOptions o;
  o.skip_kinks = true;
  const auto r = fd_gradcheck(f, Tensor::vector({0.0, 1.0}), o);
  EXPECT_EQ(r.skipped, 1u);
  EXPECT_EQ(r.checked, 1u);
  o.richardson = true;
  EXPECT_EQ(fd_gradcheck(f, Tensor::vector({0.0, 1.0}), o).skipped, 1u);
}

}  // namespace
}  // namespace cpl
