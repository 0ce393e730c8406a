#pragma once

#include <cstddef>

#include "cpl/tensor.hpp"

// Raw forward/backward kernels shared by the tape ops and by tape-free code
// paths (data synthesis, frozen feature extraction at inference).
namespace cpl::kernels {

enum class Padding { kSame, kValid };

struct ConvGeometry {
  std::size_t in_channels = 0, height = 0, width = 0;
  std::size_t out_channels = 0, kernel_h = 0, kernel_w = 0;
  std::size_t stride = 1, pad = 0;
  std::size_t out_h = 0, out_w = 0;

  std::size_t patch() const { return in_channels * kernel_h * kernel_w; }
  std::size_t out_pixels() const { return out_h * out_w; }
};

/// Validates shapes and resolves output size. Throws NumericError.
ConvGeometry conv_geometry(const Shape& input, const Shape& kernels, std::size_t stride,
                           Padding padding);

/// C = A·B for row-major A[M×K], B[K×N] (accumulate adds into C instead).
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate = false);
/// C += Aᵀ·B for A[K×M], B[K×N].
void gemm_at_b(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
               std::size_t n);
/// C += A·Bᵀ for A[M×K], B[N×K].
void gemm_a_bt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
               std::size_t n);

void im2col(const double* input, const ConvGeometry& g, double* cols);
void col2im_add(const double* cols, const ConvGeometry& g, double* input_grad);

/// Cross-correlation; `bias` may be null.
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor* bias,
              std::size_t stride, Padding padding);

Tensor avg_pool2(const Tensor& input);
Tensor upsample2(const Tensor& input);

/// Max-subtracted softmax over all elements.
Tensor softmax(const Tensor& logits);

}  // namespace cpl::kernels
