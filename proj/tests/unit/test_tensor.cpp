#include <gtest/gtest.h>

#include <cmath>

#include "cpl/error.hpp"
#include "cpl/tensor.hpp"

namespace cpl {
namespace {

TEST(Tensor, RejectsEmptyAndZeroExtents) {
  EXPECT_THROW(Tensor(Shape{}), NumericError);
  EXPECT_THROW(Tensor(Shape{3, 0}), NumericError);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), NumericError);
}

TEST(Tensor, RowMajorIndexing) {
  Tensor t({2, 3, 4}, 0.0);
  t.at(1, 2, 3) = 7.0;
  EXPECT_EQ(t[1 * 12 + 2 * 4 + 3], 7.0);
  EXPECT_EQ(t.dim(0), 2u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(shape_str(t.shape()), "[2x3x4]");
}

TEST(Tensor, ReshapeKeepsDataAndChecksCount) {
  const Tensor m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  const Tensor r = m.reshaped({3, 2});
  EXPECT_EQ(r.shape(), (Shape{3, 2}));
  EXPECT_EQ(r[5], 6.0);
  EXPECT_THROW(m.reshaped({4, 2}), NumericError);
}

TEST(Tensor, ItemRequiresSingleElement) {
  EXPECT_EQ(Tensor::scalar(2.5).item(), 2.5);
  EXPECT_THROW(Tensor::vector({1, 2}).item(), NumericError);
}

TEST(Tensor, BitwiseEqualityDistinguishesSignedZero) {
  const Tensor a = Tensor::vector({0.0});
  const Tensor b = Tensor::vector({-0.0});
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(bitwise_equal(a, b));
  EXPECT_TRUE(bitwise_equal(a, a));
}

TEST(Tensor, DifferenceMetrics) {
  const Tensor a = Tensor::vector({1, 2, 3});
  const Tensor b = Tensor::vector({1, 4, 2});
  EXPECT_DOUBLE_EQ(max_abs_diff(a, b), 2.0);
  EXPECT_DOUBLE_EQ(mean_abs_diff(a, b), 1.0);
  EXPECT_THROW(mean_abs_diff(a, Tensor::vector({1, 2})), NumericError);
}

TEST(Tensor, FiniteCheck) {
  Tensor t({2}, 1.0);
  EXPECT_TRUE(t.all_finite());
  t[1] = std::nan("");
  EXPECT_FALSE(t.all_finite());
}

}  // namespace
}  // namespace cpl
