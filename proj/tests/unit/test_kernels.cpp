#include <gtest/gtest.h>

#include <cmath>

#include "cpl/error.hpp"
#include "cpl/kernels.hpp"
#include "support.hpp"

namespace cpl {
namespace {

// Direct-loop cross-correlation with zero padding.
Tensor naive_conv(const Tensor& in, const Tensor& k, const Tensor* bias, std::size_t stride,
                  std::size_t pad) {
  const std::size_t c = in.dim(0), h = in.dim(1), w = in.dim(2);
  const std::size_t o = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
  Tensor out({o, oh, ow}, 0.0);
  for (std::size_t oc = 0; oc < o; ++oc)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double s = bias ? (*bias)[oc] : 0.0;
        for (std::size_t ic = 0; ic < c; ++ic)
          for (std::size_t dy = 0; dy < kh; ++dy)
            for (std::size_t dx = 0; dx < kw; ++dx) {
              const long iy = static_cast<long>(y * stride + dy) - static_cast<long>(pad);
              const long ix = static_cast<long>(x * stride + dx) - static_cast<long>(pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w))
                continue;
              s += in.at(ic, iy, ix) * k[((oc * c + ic) * kh + dy) * kw + dx];
            }
        out.at(oc, y, x) = s;
      }
  return out;
}

TEST(Kernels, GemmHandExample) {
  const Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  const Tensor b = Tensor::matrix(2, 1, {1, 1});
  Tensor c({2, 1}, 0.0);
  kernels::gemm(a.raw(), b.raw(), c.raw(), 2, 2, 1);
  EXPECT_EQ(c, Tensor::matrix(2, 1, {3, 7}));
}

TEST(Kernels, TransposedGemmVariants) {
  const Tensor a = test::random_tensor({3, 4}, 1);
  const Tensor b = test::random_tensor({3, 5}, 2);
  Tensor c({4, 5}, 0.0);
  kernels::gemm_at_b(a.raw(), b.raw(), c.raw(), 4, 3, 5);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 3; ++k) s += a[k * 4 + i] * b[k * 5 + j];
      EXPECT_NEAR(c[i * 5 + j], s, 1e-14);
    }
  const Tensor d = test::random_tensor({5, 3}, 3);
  Tensor e({4, 5}, 0.0);
  const Tensor at = test::random_tensor({4, 3}, 4);
  kernels::gemm_a_bt(at.raw(), d.raw(), e.raw(), 4, 3, 5);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 3; ++k) s += at[i * 3 + k] * d[j * 3 + k];
      EXPECT_NEAR(e[i * 5 + j], s, 1e-14);
    }
}

TEST(Kernels, ConvMatchesDirectLoops) {
  const Tensor in = test::random_tensor({3, 9, 7}, 5);
  const Tensor k = test::random_tensor({4, 3, 3, 3}, 6);
  const Tensor bias = test::random_tensor({4}, 7);
  const Tensor same = kernels::conv2d(in, k, &bias, 1, kernels::Padding::kSame);
  EXPECT_LT(max_abs_diff(same, naive_conv(in, k, &bias, 1, 1)), 1e-13);
  const Tensor valid = kernels::conv2d(in, k, nullptr, 2, kernels::Padding::kValid);
  EXPECT_LT(max_abs_diff(valid, naive_conv(in, k, nullptr, 2, 0)), 1e-13);
}

TEST(Kernels, ConvGeometryErrors) {
  EXPECT_THROW(kernels::conv_geometry({3, 8, 8}, {4, 2, 3, 3}, 1, kernels::Padding::kSame),
               NumericError);
  EXPECT_THROW(kernels::conv_geometry({3, 8, 8}, {4, 3, 2, 2}, 1, kernels::Padding::kSame),
               NumericError);
  EXPECT_THROW(kernels::conv_geometry({3, 2, 2}, {4, 3, 3, 3}, 1, kernels::Padding::kValid),
               NumericError);
}

TEST(Kernels, SoftmaxExample) {
  const Tensor p = kernels::softmax(Tensor::vector({2, 1, 0}));
  // e^z / Σ e^z evaluated independently.
  const double z = std::exp(2.0) + std::exp(1.0) + 1.0;
  EXPECT_NEAR(p[0], std::exp(2.0) / z, 1e-15);
  EXPECT_NEAR(p[1], std::exp(1.0) / z, 1e-15);
  EXPECT_NEAR(p[2], 1.0 / z, 1e-15);
  EXPECT_NEAR(p[0], 0.66524, 5e-6);
  EXPECT_NEAR(p[1], 0.24473, 5e-6);
  EXPECT_NEAR(p[2], 0.09003, 5e-6);
}

TEST(Kernels, SoftmaxStableForLargeLogits) {
  const Tensor p = kernels::softmax(Tensor::vector({1000, 1000}));
  EXPECT_DOUBLE_EQ(p[0], 0.5);
}

TEST(Kernels, PoolAndUpsample) {
  const Tensor in({1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(kernels::avg_pool2(in)[0], 2.5);
  const Tensor up = kernels::upsample2(in);
  EXPECT_EQ(up.shape(), (Shape{1, 4, 4}));
  EXPECT_EQ(up.at(0, 1, 1), 1.0);
  EXPECT_EQ(up.at(0, 3, 2), 4.0);
  EXPECT_THROW(kernels::avg_pool2(Tensor({1, 3, 2}, 0.0)), NumericError);
}

}  // namespace
}  // namespace cpl
