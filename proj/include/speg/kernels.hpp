#pragma once

// Dense compute kernels behind the autograd ops.
//
// Two implementations share every signature: the default one is
// cache-blocked and OpenMP-parallel, `speg::kernels::reference` is a plain
// serial loop nest kept as the test oracle and benchmark baseline.
// Parallel loops only partition independent outputs, so results do not
// depend on the thread count.

#include <cstddef>
#include <span>

namespace speg::kernels {

struct ConvGeometry {
  int batch = 1;
  int in_channels = 1;
  int in_h = 1;
  int in_w = 1;
  int out_channels = 1;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  int pad = 0;
  int dilation = 1;
  int groups = 1;

  int out_h() const {
    return (in_h + 2 * pad - dilation * (kernel_h - 1) - 1) / stride + 1;
  }
  int out_w() const {
    return (in_w + 2 * pad - dilation * (kernel_w - 1) - 1) / stride + 1;
  }
  int in_per_group() const { return in_channels / groups; }
  int out_per_group() const { return out_channels / groups; }
  std::size_t weight_size() const {
    return static_cast<std::size_t>(out_channels) * in_per_group() *
           kernel_h * kernel_w;
  }
  void validate() const;
};

// C[m x n] (+)= A[m x k] * B[k x n]; A addressed as a[i*a_row + p*a_col].
void gemm(int m, int n, int k, const double* a, std::ptrdiff_t a_row,
          std::ptrdiff_t a_col, const double* b, std::ptrdiff_t ldb,
          double* c, std::ptrdiff_t ldc, bool accumulate);
// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt(int m, int n, int k, const double* a, std::ptrdiff_t lda,
             const double* b, std::ptrdiff_t ldb, double* c,
             std::ptrdiff_t ldc);

// y = conv(x, weight) + bias. bias may be empty.
void conv2d_forward(const ConvGeometry& g, std::span<const double> x,
                    std::span<const double> weight,
                    std::span<const double> bias, std::span<double> y);
// dx += conv^T(dy, weight)
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dy,
                           std::span<const double> weight,
                           std::span<double> dx);
// dweight += ..., dbias += ... (dbias may be empty)
void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> x,
                            std::span<const double> dy,
                            std::span<double> dweight,
                            std::span<double> dbias);

// Bilinear resampling with half-pixel centres (align_corners = false).
// `planes` = batch * channels.
void resize_bilinear_forward(int planes, int in_h, int in_w, int out_h,
                             int out_w, std::span<const double> x,
                             std::span<double> y);
void resize_bilinear_backward(int planes, int in_h, int in_w, int out_h,
                              int out_w, std::span<const double> dy,
                              std::span<double> dx);

namespace reference {

void conv2d_forward(const ConvGeometry& g, std::span<const double> x,
                    std::span<const double> weight,
                    std::span<const double> bias, std::span<double> y);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dy,
                           std::span<const double> weight,
                           std::span<double> dx);
void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> x,
                            std::span<const double> dy,
                            std::span<double> dweight,
                            std::span<double> dbias);
void resize_bilinear_forward(int planes, int in_h, int in_w, int out_h,
                             int out_w, std::span<const double> x,
                             std::span<double> y);
void resize_bilinear_backward(int planes, int in_h, int in_w, int out_h,
                              int out_w, std::span<const double> dy,
                              std::span<double> dx);

}  // namespace reference

}  // namespace speg::kernels
