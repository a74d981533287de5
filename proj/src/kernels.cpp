#include "speg/kernels.hpp"

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "speg/errors.hpp"

namespace speg::kernels {

void ConvGeometry::validate() const {
  if (batch <= 0 || in_channels <= 0 || out_channels <= 0 || in_h <= 0 ||
      in_w <= 0 || kernel_h <= 0 || kernel_w <= 0 || stride <= 0 ||
      dilation <= 0 || pad < 0 || groups <= 0) {
    throw ShapeError("conv2d: non-positive geometry");
  }
  if (in_channels % groups != 0 || out_channels % groups != 0) {
    throw ShapeError("conv2d: channels not divisible by groups");
  }
  if (out_h() <= 0 || out_w() <= 0) {
    throw ShapeError("conv2d: kernel larger than padded input (" +
                     std::to_string(in_h) + "x" + std::to_string(in_w) + ")");
  }
}

namespace {

constexpr int kBlockK = 256;
constexpr int kBlockN = 1024;
constexpr std::size_t kColBudget = std::size_t{1} << 21;

bool is_pointwise(const ConvGeometry& g) {
  return g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.pad == 0;
}

int chunk_pixels(const ConvGeometry& g) {
  const std::size_t k = static_cast<std::size_t>(g.in_per_group()) *
                        g.kernel_h * g.kernel_w;
  const int total = g.out_h() * g.out_w();
  const auto budget = static_cast<int>(std::max<std::size_t>(
      static_cast<std::size_t>(g.out_w()), kColBudget / k));
  return std::min(total, budget);
}

// Gathers the receptive fields of output pixels [p0, p0 + count) of one
// group into col[K x count].
void im2col(const ConvGeometry& g, const double* x_group, int p0, int count,
            double* col) {
  const int kk = g.kernel_h * g.kernel_w;
  const int rows = g.in_per_group() * kk;
  const int ow = g.out_w();
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const int ci = r / kk;
    const int ky = (r % kk) / g.kernel_w;
    const int kx = r % g.kernel_w;
    const double* plane = x_group + static_cast<std::size_t>(ci) * g.in_h * g.in_w;
    double* dst = col + static_cast<std::size_t>(r) * count;
    for (int q = 0; q < count; ++q) {
      const int p = p0 + q;
      const int oy = p / ow;
      const int ox = p % ow;
      const int iy = oy * g.stride - g.pad + ky * g.dilation;
      const int ix = ox * g.stride - g.pad + kx * g.dilation;
      dst[q] = (iy >= 0 && iy < g.in_h && ix >= 0 && ix < g.in_w)
                   ? plane[static_cast<std::size_t>(iy) * g.in_w + ix]
                   : 0.0;
    }
  }
}

// Scatter-adds col[K x count] back into the input planes of one group.
// Parallel over input channels so each plane has a single writer.
void col2im(const ConvGeometry& g, const double* col, int p0, int count,
            double* dx_group) {
  const int kk = g.kernel_h * g.kernel_w;
  const int ow = g.out_w();
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < g.in_per_group(); ++ci) {
    double* plane = dx_group + static_cast<std::size_t>(ci) * g.in_h * g.in_w;
    for (int j = 0; j < kk; ++j) {
      const int ky = j / g.kernel_w;
      const int kx = j % g.kernel_w;
      const double* src = col + static_cast<std::size_t>(ci * kk + j) * count;
      for (int q = 0; q < count; ++q) {
        const int p = p0 + q;
        const int iy = (p / ow) * g.stride - g.pad + ky * g.dilation;
        const int ix = (p % ow) * g.stride - g.pad + kx * g.dilation;
        if (iy >= 0 && iy < g.in_h && ix >= 0 && ix < g.in_w) {
          plane[static_cast<std::size_t>(iy) * g.in_w + ix] += src[q];
        }
      }
    }
  }
}

bool is_depthwise(const ConvGeometry& g) {
  return g.in_per_group() == 1 && g.out_per_group() == 1 && g.groups > 1;
}

// Output columns [lo, hi) whose tap kx lands inside the input row.
std::pair<int, int> valid_columns(const ConvGeometry& g, int kx) {
  const int off = kx * g.dilation - g.pad;
  const int lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
  const int last = g.in_w - 1 - off;
  const int hi = last < 0 ? 0 : std::min(g.out_w(), last / g.stride + 1);
  return {lo, std::max(lo, hi)};
}

// Visits every in-bounds (tap, output row) of one plane for groups == channels.
template <class Fn>
void for_each_depthwise_tap(const ConvGeometry& g, Fn&& fn) {
  for (int ky = 0; ky < g.kernel_h; ++ky)
    for (int kx = 0; kx < g.kernel_w; ++kx) {
      const auto [lo, hi] = valid_columns(g, kx);
      const int off = kx * g.dilation - g.pad;
      for (int oy = 0; oy < g.out_h(); ++oy) {
        const int iy = oy * g.stride - g.pad + ky * g.dilation;
        if (iy < 0 || iy >= g.in_h) continue;
        fn(ky, kx, oy, iy, lo, hi, off);
      }
    }
}

void check_sizes(const ConvGeometry& g, std::size_t x, std::size_t w,
                 std::size_t y) {
  g.validate();
  const std::size_t xs =
      static_cast<std::size_t>(g.batch) * g.in_channels * g.in_h * g.in_w;
  const std::size_t ys = static_cast<std::size_t>(g.batch) * g.out_channels *
                         g.out_h() * g.out_w();
  if (x != xs || w != g.weight_size() || y != ys) {
    throw ShapeError("conv2d: buffer sizes do not match geometry");
  }
}

}  // namespace

void gemm(int m, int n, int k, const double* a, std::ptrdiff_t a_row,
          std::ptrdiff_t a_col, const double* b, std::ptrdiff_t ldb,
          double* c, std::ptrdiff_t ldc, bool accumulate) {
  if (!accumulate) {
    for (int i = 0; i < m; ++i) std::fill_n(c + i * ldc, n, 0.0);
  }
  const int row_blocks = (m + 3) / 4;
  for (int j0 = 0; j0 < n; j0 += kBlockN) {
    const int jn = std::min(kBlockN, n - j0);
    for (int p0 = 0; p0 < k; p0 += kBlockK) {
      const int pn = std::min(kBlockK, k - p0);
#pragma omp parallel for schedule(static)
      for (int ib = 0; ib < row_blocks; ++ib) {
        const int i0 = ib * 4;
        if (i0 + 4 <= m) {
          double* c0 = c + i0 * ldc + j0;
          double* c1 = c0 + ldc;
          double* c2 = c1 + ldc;
          double* c3 = c2 + ldc;
          for (int p = p0; p < p0 + pn; ++p) {
            const double a0 = a[i0 * a_row + p * a_col];
            const double a1 = a[(i0 + 1) * a_row + p * a_col];
            const double a2 = a[(i0 + 2) * a_row + p * a_col];
            const double a3 = a[(i0 + 3) * a_row + p * a_col];
            const double* bp = b + p * ldb + j0;
#pragma omp simd
            for (int j = 0; j < jn; ++j) {
              const double bv = bp[j];
              c0[j] += a0 * bv;
              c1[j] += a1 * bv;
              c2[j] += a2 * bv;
              c3[j] += a3 * bv;
            }
          }
        } else {
          for (int i = i0; i < m; ++i) {
            double* ci = c + i * ldc + j0;
            for (int p = p0; p < p0 + pn; ++p) {
              const double av = a[i * a_row + p * a_col];
              const double* bp = b + p * ldb + j0;
#pragma omp simd
              for (int j = 0; j < jn; ++j) ci[j] += av * bp[j];
            }
          }
        }
      }
    }
  }
}

void gemm_nt(int m, int n, int k, const double* a, std::ptrdiff_t lda,
             const double* b, std::ptrdiff_t ldb, double* c,
             std::ptrdiff_t ldc) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    const double* ai = a + i * lda;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + j * ldb;
      double s = 0.0;
#pragma omp simd reduction(+ : s)
      for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * ldc + j] += s;
    }
  }
}

void conv2d_forward(const ConvGeometry& g, std::span<const double> x,
                    std::span<const double> weight,
                    std::span<const double> bias, std::span<double> y) {
  check_sizes(g, x.size(), weight.size(), y.size());
  const int cin_g = g.in_per_group();
  const int cout_g = g.out_per_group();
  const int k = cin_g * g.kernel_h * g.kernel_w;
  const int pixels = g.out_h() * g.out_w();
  const std::size_t in_plane = static_cast<std::size_t>(g.in_h) * g.in_w;
  const bool pointwise = is_pointwise(g);
  const int chunk = chunk_pixels(g);
  if (is_depthwise(g)) {
    const int ow = g.out_w();
#pragma omp parallel for schedule(static)
    for (int plane = 0; plane < g.batch * g.out_channels; ++plane) {
      const double* xp = x.data() + static_cast<std::size_t>(plane) * in_plane;
      const double* wp = weight.data() + static_cast<std::size_t>(plane % g.out_channels) * k;
      double* yp = y.data() + static_cast<std::size_t>(plane) * pixels;
      std::fill_n(yp, pixels, 0.0);
      for_each_depthwise_tap(g, [&](int ky, int kx, int oy, int iy, int lo, int hi, int off) {
        const double wv = wp[ky * g.kernel_w + kx];
        const double* xr = xp + static_cast<std::size_t>(iy) * g.in_w + off;
        double* yr = yp + static_cast<std::size_t>(oy) * ow;
        for (int ox = lo; ox < hi; ++ox) yr[ox] += wv * xr[ox * g.stride];
      });
    }
  }
  std::vector<double> col(pointwise || is_depthwise(g) ? 0 : static_cast<std::size_t>(k) * chunk);

  for (int n = 0; n < g.batch && !is_depthwise(g); ++n) {
    for (int grp = 0; grp < g.groups; ++grp) {
      const double* xg =
          x.data() + (static_cast<std::size_t>(n) * g.in_channels + grp * cin_g) * in_plane;
      const double* wg = weight.data() + static_cast<std::size_t>(grp) * cout_g * k;
      double* yg = y.data() + (static_cast<std::size_t>(n) * g.out_channels + grp * cout_g) * pixels;
      if (pointwise) {
        gemm(cout_g, pixels, k, wg, k, 1, xg, pixels, yg, pixels, false);
        continue;
      }
      for (int p0 = 0; p0 < pixels; p0 += chunk) {
        const int count = std::min(chunk, pixels - p0);
        im2col(g, xg, p0, count, col.data());
        gemm(cout_g, count, k, wg, k, 1, col.data(), count, yg + p0, pixels,
             false);
      }
    }
  }
  if (!bias.empty()) {
#pragma omp parallel for schedule(static)
    for (int plane = 0; plane < g.batch * g.out_channels; ++plane) {
      const double bv = bias[plane % g.out_channels];
      double* yp = y.data() + static_cast<std::size_t>(plane) * pixels;
      for (int p = 0; p < pixels; ++p) yp[p] += bv;
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dy,
                           std::span<const double> weight,
                           std::span<double> dx) {
  check_sizes(g, dx.size(), weight.size(), dy.size());
  const int cin_g = g.in_per_group();
  const int cout_g = g.out_per_group();
  const int k = cin_g * g.kernel_h * g.kernel_w;
  const int pixels = g.out_h() * g.out_w();
  const std::size_t in_plane = static_cast<std::size_t>(g.in_h) * g.in_w;
  const bool pointwise = is_pointwise(g);
  const int chunk = chunk_pixels(g);
  if (is_depthwise(g)) {
    const int ow = g.out_w();
#pragma omp parallel for schedule(static)
    for (int plane = 0; plane < g.batch * g.in_channels; ++plane) {
      double* dxp = dx.data() + static_cast<std::size_t>(plane) * in_plane;
      const double* wp = weight.data() + static_cast<std::size_t>(plane % g.in_channels) * k;
      const double* dyp = dy.data() + static_cast<std::size_t>(plane) * pixels;
      for_each_depthwise_tap(g, [&](int ky, int kx, int oy, int iy, int lo, int hi, int off) {
        const double wv = wp[ky * g.kernel_w + kx];
        double* dxr = dxp + static_cast<std::size_t>(iy) * g.in_w + off;
        const double* dyr = dyp + static_cast<std::size_t>(oy) * ow;
        for (int ox = lo; ox < hi; ++ox) dxr[ox * g.stride] += wv * dyr[ox];
      });
    }
    return;
  }
  std::vector<double> col(pointwise ? 0 : static_cast<std::size_t>(k) * chunk);

  for (int n = 0; n < g.batch; ++n) {
    for (int grp = 0; grp < g.groups; ++grp) {
      double* dxg = dx.data() + (static_cast<std::size_t>(n) * g.in_channels + grp * cin_g) * in_plane;
      const double* wg = weight.data() + static_cast<std::size_t>(grp) * cout_g * k;
      const double* dyg = dy.data() + (static_cast<std::size_t>(n) * g.out_channels + grp * cout_g) * pixels;
      if (pointwise) {
        gemm(k, pixels, cout_g, wg, 1, k, dyg, pixels, dxg, pixels, true);
        continue;
      }
      for (int p0 = 0; p0 < pixels; p0 += chunk) {
        const int count = std::min(chunk, pixels - p0);
        gemm(k, count, cout_g, wg, 1, k, dyg + p0, pixels, col.data(), count,
             false);
        col2im(g, col.data(), p0, count, dxg);
      }
    }
  }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> x,
                            std::span<const double> dy,
                            std::span<double> dweight,
                            std::span<double> dbias) {
  check_sizes(g, x.size(), dweight.size(), dy.size());
  const int cin_g = g.in_per_group();
  const int cout_g = g.out_per_group();
  const int k = cin_g * g.kernel_h * g.kernel_w;
  const int pixels = g.out_h() * g.out_w();
  const std::size_t in_plane = static_cast<std::size_t>(g.in_h) * g.in_w;
  const bool pointwise = is_pointwise(g);
  const int chunk = chunk_pixels(g);
  if (is_depthwise(g)) {
    const int ow = g.out_w();
#pragma omp parallel for schedule(static)
    for (int c = 0; c < g.out_channels; ++c) {
      double* dwp = dweight.data() + static_cast<std::size_t>(c) * k;
      for (int n = 0; n < g.batch; ++n) {
        const int plane = n * g.out_channels + c;
        const double* xp = x.data() + static_cast<std::size_t>(plane) * in_plane;
        const double* dyp = dy.data() + static_cast<std::size_t>(plane) * pixels;
        for_each_depthwise_tap(g, [&](int ky, int kx, int oy, int iy, int lo, int hi, int off) {
          const double* xr = xp + static_cast<std::size_t>(iy) * g.in_w + off;
          const double* dyr = dyp + static_cast<std::size_t>(oy) * ow;
          double s = 0.0;
          for (int ox = lo; ox < hi; ++ox) s += dyr[ox] * xr[ox * g.stride];
          dwp[ky * g.kernel_w + kx] += s;
        });
      }
    }
  }
  std::vector<double> col(pointwise || is_depthwise(g) ? 0 : static_cast<std::size_t>(k) * chunk);

  for (int n = 0; n < g.batch && !is_depthwise(g); ++n) {
    for (int grp = 0; grp < g.groups; ++grp) {
      const double* xg = x.data() + (static_cast<std::size_t>(n) * g.in_channels + grp * cin_g) * in_plane;
      double* dwg = dweight.data() + static_cast<std::size_t>(grp) * cout_g * k;
      const double* dyg = dy.data() + (static_cast<std::size_t>(n) * g.out_channels + grp * cout_g) * pixels;
      if (pointwise) {
        gemm_nt(cout_g, k, pixels, dyg, pixels, xg, pixels, dwg, k);
        continue;
      }
      for (int p0 = 0; p0 < pixels; p0 += chunk) {
        const int count = std::min(chunk, pixels - p0);
        im2col(g, xg, p0, count, col.data());
        gemm_nt(cout_g, k, count, dyg + p0, pixels, col.data(), count, dwg, k);
      }
    }
  }
  if (!dbias.empty()) {
#pragma omp parallel for schedule(static)
    for (int co = 0; co < g.out_channels; ++co) {
      double s = 0.0;
      for (int n = 0; n < g.batch; ++n) {
        const double* dyp = dy.data() + (static_cast<std::size_t>(n) * g.out_channels + co) * pixels;
        for (int p = 0; p < pixels; ++p) s += dyp[p];
      }
      dbias[co] += s;
    }
  }
}

namespace {

struct Tap {
  int lo;
  int hi;
  double frac;
};

std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    const double src = std::max(scale * (o + 0.5) - 0.5, 0.0);
    const int lo = std::min(static_cast<int>(src), in - 1);
    const int hi = lo < in - 1 ? lo + 1 : lo;
    taps[o] = {lo, hi, src - lo};
  }
  return taps;
}

}  // namespace

void resize_bilinear_forward(int planes, int in_h, int in_w, int out_h,
                             int out_w, std::span<const double> x,
                             std::span<double> y) {
  const auto ty = bilinear_taps(in_h, out_h);
  const auto tx = bilinear_taps(in_w, out_w);
  const std::size_t ip = static_cast<std::size_t>(in_h) * in_w;
  const std::size_t op = static_cast<std::size_t>(out_h) * out_w;
#pragma omp parallel for schedule(static)
  for (int pl = 0; pl < planes; ++pl) {
    const double* src = x.data() + pl * ip;
    double* dst = y.data() + pl * op;
    for (int oy = 0; oy < out_h; ++oy) {
      const double* r0 = src + static_cast<std::size_t>(ty[oy].lo) * in_w;
      const double* r1 = src + static_cast<std::size_t>(ty[oy].hi) * in_w;
      const double fy = ty[oy].frac;
      for (int ox = 0; ox < out_w; ++ox) {
        const Tap t = tx[ox];
        const double top = (1.0 - t.frac) * r0[t.lo] + t.frac * r0[t.hi];
        const double bot = (1.0 - t.frac) * r1[t.lo] + t.frac * r1[t.hi];
        dst[static_cast<std::size_t>(oy) * out_w + ox] = (1.0 - fy) * top + fy * bot;
      }
    }
  }
}

void resize_bilinear_backward(int planes, int in_h, int in_w, int out_h,
                              int out_w, std::span<const double> dy,
                              std::span<double> dx) {
  const auto ty = bilinear_taps(in_h, out_h);
  const auto tx = bilinear_taps(in_w, out_w);
  const std::size_t ip = static_cast<std::size_t>(in_h) * in_w;
  const std::size_t op = static_cast<std::size_t>(out_h) * out_w;
#pragma omp parallel for schedule(static)
  for (int pl = 0; pl < planes; ++pl) {
    const double* src = dy.data() + pl * op;
    double* dst = dx.data() + pl * ip;
    for (int oy = 0; oy < out_h; ++oy) {
      double* r0 = dst + static_cast<std::size_t>(ty[oy].lo) * in_w;
      double* r1 = dst + static_cast<std::size_t>(ty[oy].hi) * in_w;
      const double fy = ty[oy].frac;
      for (int ox = 0; ox < out_w; ++ox) {
        const Tap t = tx[ox];
        const double gv = src[static_cast<std::size_t>(oy) * out_w + ox];
        const double gt = (1.0 - fy) * gv;
        const double gb = fy * gv;
        r0[t.lo] += (1.0 - t.frac) * gt;
        r0[t.hi] += t.frac * gt;
        r1[t.lo] += (1.0 - t.frac) * gb;
        r1[t.hi] += t.frac * gb;
      }
    }
  }
}

namespace reference {

void conv2d_forward(const ConvGeometry& g, std::span<const double> x,
                    std::span<const double> weight,
                    std::span<const double> bias, std::span<double> y) {
  check_sizes(g, x.size(), weight.size(), y.size());
  const int oh = g.out_h();
  const int ow = g.out_w();
  const int cin_g = g.in_per_group();
  const int cout_g = g.out_per_group();
  for (int n = 0; n < g.batch; ++n)
    for (int co = 0; co < g.out_channels; ++co) {
      const int grp = co / cout_g;
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double s = bias.empty() ? 0.0 : bias[co];
          for (int ci = 0; ci < cin_g; ++ci)
            for (int ky = 0; ky < g.kernel_h; ++ky)
              for (int kx = 0; kx < g.kernel_w; ++kx) {
                const int iy = oy * g.stride - g.pad + ky * g.dilation;
                const int ix = ox * g.stride - g.pad + kx * g.dilation;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                const int c_in = grp * cin_g + ci;
                s += weight[((static_cast<std::size_t>(co) * cin_g + ci) * g.kernel_h + ky) * g.kernel_w + kx] *
                     x[((static_cast<std::size_t>(n) * g.in_channels + c_in) * g.in_h + iy) * g.in_w + ix];
              }
          y[((static_cast<std::size_t>(n) * g.out_channels + co) * oh + oy) * ow + ox] = s;
        }
    }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dy,
                           std::span<const double> weight,
                           std::span<double> dx) {
  check_sizes(g, dx.size(), weight.size(), dy.size());
  const int oh = g.out_h();
  const int ow = g.out_w();
  const int cin_g = g.in_per_group();
  const int cout_g = g.out_per_group();
  for (int n = 0; n < g.batch; ++n)
    for (int co = 0; co < g.out_channels; ++co) {
      const int grp = co / cout_g;
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const double gv = dy[((static_cast<std::size_t>(n) * g.out_channels + co) * oh + oy) * ow + ox];
          for (int ci = 0; ci < cin_g; ++ci)
            for (int ky = 0; ky < g.kernel_h; ++ky)
              for (int kx = 0; kx < g.kernel_w; ++kx) {
                const int iy = oy * g.stride - g.pad + ky * g.dilation;
                const int ix = ox * g.stride - g.pad + kx * g.dilation;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                const int c_in = grp * cin_g + ci;
                dx[((static_cast<std::size_t>(n) * g.in_channels + c_in) * g.in_h + iy) * g.in_w + ix] +=
                    gv * weight[((static_cast<std::size_t>(co) * cin_g + ci) * g.kernel_h + ky) * g.kernel_w + kx];
              }
        }
    }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> x,
                            std::span<const double> dy,
                            std::span<double> dweight,
                            std::span<double> dbias) {
  check_sizes(g, x.size(), dweight.size(), dy.size());
  const int oh = g.out_h();
  const int ow = g.out_w();
  const int cin_g = g.in_per_group();
  const int cout_g = g.out_per_group();
  for (int n = 0; n < g.batch; ++n)
    for (int co = 0; co < g.out_channels; ++co) {
      const int grp = co / cout_g;
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const double gv = dy[((static_cast<std::size_t>(n) * g.out_channels + co) * oh + oy) * ow + ox];
          if (!dbias.empty()) dbias[co] += gv;
          for (int ci = 0; ci < cin_g; ++ci)
            for (int ky = 0; ky < g.kernel_h; ++ky)
              for (int kx = 0; kx < g.kernel_w; ++kx) {
                const int iy = oy * g.stride - g.pad + ky * g.dilation;
                const int ix = ox * g.stride - g.pad + kx * g.dilation;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                const int c_in = grp * cin_g + ci;
                dweight[((static_cast<std::size_t>(co) * cin_g + ci) * g.kernel_h + ky) * g.kernel_w + kx] +=
                    gv * x[((static_cast<std::size_t>(n) * g.in_channels + c_in) * g.in_h + iy) * g.in_w + ix];
              }
        }
    }
}

void resize_bilinear_forward(int planes, int in_h, int in_w, int out_h,
                             int out_w, std::span<const double> x,
                             std::span<double> y) {
  const double sy = static_cast<double>(in_h) / out_h;
  const double sx = static_cast<double>(in_w) / out_w;
  for (int pl = 0; pl < planes; ++pl)
    for (int oy = 0; oy < out_h; ++oy)
      for (int ox = 0; ox < out_w; ++ox) {
        const double fy = std::max(sy * (oy + 0.5) - 0.5, 0.0);
        const double fx = std::max(sx * (ox + 0.5) - 0.5, 0.0);
        const int y0 = std::min(static_cast<int>(fy), in_h - 1);
        const int x0 = std::min(static_cast<int>(fx), in_w - 1);
        const int y1 = std::min(y0 + 1, in_h - 1);
        const int x1 = std::min(x0 + 1, in_w - 1);
        const double ly = fy - y0;
        const double lx = fx - x0;
        auto at = [&](int r, int c) {
          return x[(static_cast<std::size_t>(pl) * in_h + r) * in_w + c];
        };
        y[(static_cast<std::size_t>(pl) * out_h + oy) * out_w + ox] =
            (1 - ly) * ((1 - lx) * at(y0, x0) + lx * at(y0, x1)) +
            ly * ((1 - lx) * at(y1, x0) + lx * at(y1, x1));
      }
}

void resize_bilinear_backward(int planes, int in_h, int in_w, int out_h,
                              int out_w, std::span<const double> dy,
                              std::span<double> dx) {
  const double sy = static_cast<double>(in_h) / out_h;
  const double sx = static_cast<double>(in_w) / out_w;
  for (int pl = 0; pl < planes; ++pl)
    for (int oy = 0; oy < out_h; ++oy)
      for (int ox = 0; ox < out_w; ++ox) {
        const double fy = std::max(sy * (oy + 0.5) - 0.5, 0.0);
        const double fx = std::max(sx * (ox + 0.5) - 0.5, 0.0);
        const int y0 = std::min(static_cast<int>(fy), in_h - 1);
        const int x0 = std::min(static_cast<int>(fx), in_w - 1);
        const int y1 = std::min(y0 + 1, in_h - 1);
        const int x1 = std::min(x0 + 1, in_w - 1);
        const double ly = fy - y0;
        const double lx = fx - x0;
        const double gv = dy[(static_cast<std::size_t>(pl) * out_h + oy) * out_w + ox];
        auto at = [&](int r, int c) -> double& {
          return dx[(static_cast<std::size_t>(pl) * in_h + r) * in_w + c];
        };
        at(y0, x0) += (1 - ly) * (1 - lx) * gv;
        at(y0, x1) += (1 - ly) * lx * gv;
        at(y1, x0) += ly * (1 - lx) * gv;
        at(y1, x1) += ly * lx * gv;
      }
}

}  // namespace reference

}  // namespace speg::kernels
