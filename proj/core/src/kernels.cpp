#include "cpl/kernels.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>

#include "cpl/error.hpp"

namespace cpl::kernels {

namespace {

// Multi-threaded BLAS reductions are not guaranteed to be reproducible.
const bool kSingleThreadedBlas = [] {
  openblas_set_num_threads(1);
  return true;
}();

blasint as_blas(std::size_t v) { return static_cast<blasint>(v); }

}  // namespace

ConvGeometry conv_geometry(const Shape& input, const Shape& kernels, std::size_t stride,
                           Padding padding) {
  if (input.size() != 3) throw NumericError("conv2d: input must be C×H×W, got " + shape_str(input));
  if (kernels.size() != 4) {
    throw NumericError("conv2d: kernels must be Cout×Cin×kh×kw, got " + shape_str(kernels));
  }
  if (kernels[1] != input[0]) {
    throw NumericError("conv2d: kernel input channels " + std::to_string(kernels[1]) +
                       " != input channels " + std::to_string(input[0]));
  }
  if (kernels[2] % 2 == 0 || kernels[3] % 2 == 0) {
    throw NumericError("conv2d: kernel extents must be odd, got " + shape_str(kernels));
  }
  if (stride == 0) throw NumericError("conv2d: stride must be positive");
  ConvGeometry g;
  g.in_channels = input[0];
  g.height = input[1];
  g.width = input[2];
  g.out_channels = kernels[0];
  g.kernel_h = kernels[2];
  g.kernel_w = kernels[3];
  g.stride = stride;
  g.pad = padding == Padding::kSame ? std::max(g.kernel_h, g.kernel_w) / 2 : 0;
  if (padding == Padding::kSame && g.kernel_h != g.kernel_w) {
    throw NumericError("conv2d: same padding requires square kernels");
  }
  const std::size_t padded_h = g.height + 2 * g.pad;
  const std::size_t padded_w = g.width + 2 * g.pad;
  if (g.kernel_h > padded_h || g.kernel_w > padded_w) {
    throw NumericError("conv2d: kernel " + shape_str(kernels) + " larger than padded input " +
                       shape_str(input));
  }
  g.out_h = (padded_h - g.kernel_h) / stride + 1;
  g.out_w = (padded_w - g.kernel_w) / stride + 1;
  return g;
}

void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate) {
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, as_blas(m), as_blas(n), as_blas(k), 1.0,
              a, as_blas(k), b, as_blas(n), accumulate ? 1.0 : 0.0, c, as_blas(n));
}

void gemm_at_b(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
               std::size_t n) {
  cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, as_blas(m), as_blas(n), as_blas(k), 1.0, a,
              as_blas(m), b, as_blas(n), 1.0, c, as_blas(n));
}

void gemm_a_bt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
               std::size_t n) {
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, as_blas(m), as_blas(n), as_blas(k), 1.0, a,
              as_blas(k), b, as_blas(k), 1.0, c, as_blas(n));
}

void im2col(const double* input, const ConvGeometry& g, double* cols) {
  const std::size_t pixels = g.out_pixels();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const double* plane = input + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx, ++row) {
        double* out = cols + row * pixels;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          double* out_row = out + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(out_row, out_row + g.out_w, 0.0);
            continue;
          }
          const double* in_row = plane + static_cast<std::size_t>(iy) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            out_row[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width))
                              ? 0.0
                              : in_row[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* input_grad) {
  const std::size_t pixels = g.out_pixels();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    double* plane = input_grad + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx, ++row) {
        const double* src = cols + row * pixels;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          double* dst_row = plane + static_cast<std::size_t>(iy) * g.width;
          const double* src_row = src + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            dst_row[static_cast<std::size_t>(ix)] += src_row[ox];
          }
        }
      }
    }
  }
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor* bias, std::size_t stride,
              Padding padding) {
  const ConvGeometry g = conv_geometry(input.shape(), kernels.shape(), stride, padding);
  if (bias != nullptr && bias->size() != g.out_channels) {
    throw NumericError("conv2d: bias length does not match output channels");
  }
  std::vector<double> cols(g.patch() * g.out_pixels());
  im2col(input.raw(), g, cols.data());
  Tensor out({g.out_channels, g.out_h, g.out_w});
  if (bias != nullptr) {
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      std::fill_n(out.raw() + o * g.out_pixels(), g.out_pixels(), (*bias)[o]);
    }
  }
  gemm(kernels.raw(), cols.data(), out.raw(), g.out_channels, g.patch(), g.out_pixels(),
       bias != nullptr);
  return out;
}

Tensor avg_pool2(const Tensor& input) {
  if (input.rank() != 3 || input.dim(1) % 2 != 0 || input.dim(2) % 2 != 0) {
    throw NumericError("avg_pool2: need C×H×W with even H, W, got " + shape_str(input.shape()));
  }
  const std::size_t c = input.dim(0), h = input.dim(1) / 2, w = input.dim(2) / 2;
  Tensor out({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        out.at(ch, y, x) = 0.25 * (input.at(ch, 2 * y, 2 * x) + input.at(ch, 2 * y, 2 * x + 1) +
                                   input.at(ch, 2 * y + 1, 2 * x) +
                                   input.at(ch, 2 * y + 1, 2 * x + 1));
  return out;
}

Tensor upsample2(const Tensor& input) {
  if (input.rank() != 3) throw NumericError("upsample2: need C×H×W");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t x = 0; x < 2 * w; ++x) out.at(ch, y, x) = input.at(ch, y / 2, x / 2);
  return out;
}

Tensor softmax(const Tensor& logits) {
  Tensor out = logits;
  const double peak = *std::max_element(out.data().begin(), out.data().end());
  double total = 0.0;
  for (auto& v : out.data()) {
    v = std::exp(v - peak);
    total += v;
  }
  for (auto& v : out.data()) v /= total;
  return out;
}

}  // namespace cpl::kernels
