// Blocked/OpenMP kernels against the serial reference.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "speg/kernels.hpp"

namespace k = speg::kernels;

namespace {

std::vector<double> filled(std::size_t n, unsigned seed) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> v(n);
  for (auto& x : v) x = u(g);
  return v;
}

// args: channels, spatial size, kernel, dilation, groups
k::ConvGeometry geometry(const benchmark::State& st) {
  k::ConvGeometry g;
  g.in_channels = g.out_channels = static_cast<int>(st.range(0));
  g.in_h = g.in_w = static_cast<int>(st.range(1));
  g.kernel_h = g.kernel_w = static_cast<int>(st.range(2));
  g.dilation = static_cast<int>(st.range(3));
  g.groups = static_cast<int>(st.range(4));
  g.pad = g.dilation * (g.kernel_h - 1) / 2;
  return g;
}

struct ConvBuffers {
  std::vector<double> x, w, b, y;
  explicit ConvBuffers(const k::ConvGeometry& g)
      : x(filled(std::size_t(g.batch) * g.in_channels * g.in_h * g.in_w, 1)),
        w(filled(g.weight_size(), 2)),
        b(filled(g.out_channels, 3)),
        y(std::size_t(g.batch) * g.out_channels * g.out_h() * g.out_w()) {}
};

template <auto Fn>
void BM_conv_forward(benchmark::State& st) {
  const auto g = geometry(st);
  ConvBuffers buf(g);
  for (auto _ : st) {
    Fn(g, buf.x, buf.w, buf.b, buf.y);
    benchmark::DoNotOptimize(buf.y.data());
  }
  st.SetItemsProcessed(st.iterations() * int64_t(buf.y.size()) * g.in_per_group() * g.kernel_h * g.kernel_w);
}

template <auto Fn>
void BM_conv_backward_input(benchmark::State& st) {
  const auto g = geometry(st);
  ConvBuffers buf(g);
  std::vector<double> dx(buf.x.size());
  for (auto _ : st) {
    Fn(g, buf.y, buf.w, dx);
    benchmark::DoNotOptimize(dx.data());
  }
}

template <auto Fn>
void BM_conv_backward_weight(benchmark::State& st) {
  const auto g = geometry(st);
  ConvBuffers buf(g);
  std::vector<double> dw(buf.w.size()), db(buf.b.size());
  for (auto _ : st) {
    Fn(g, buf.x, buf.y, dw, db);
    benchmark::DoNotOptimize(dw.data());
  }
}

template <auto Fn>
void BM_resize(benchmark::State& st) {
  const int planes = 32, in = static_cast<int>(st.range(0)), out = in * 2;
  const auto x = filled(std::size_t(planes) * in * in, 4);
  std::vector<double> y(std::size_t(planes) * out * out);
  for (auto _ : st) {
    Fn(planes, in, in, out, out, x, y);
    benchmark::DoNotOptimize(y.data());
  }
}

void conv_shapes(benchmark::internal::Benchmark* b) {
  b->Args({64, 32, 1, 1, 1});
  b->Args({64, 32, 3, 1, 1});
  b->Args({64, 32, 3, 4, 64});
  b->Args({128, 16, 3, 2, 1});
  b->Unit(benchmark::kMillisecond);
}

}  // namespace

BENCHMARK(BM_conv_forward<k::conv2d_forward>)->Name("conv_forward/blocked")->Apply(conv_shapes);
BENCHMARK(BM_conv_forward<k::reference::conv2d_forward>)->Name("conv_forward/reference")->Apply(conv_shapes);
BENCHMARK(BM_conv_backward_input<k::conv2d_backward_input>)->Name("conv_bwd_input/blocked")->Apply(conv_shapes);
BENCHMARK(BM_conv_backward_input<k::reference::conv2d_backward_input>)
    ->Name("conv_bwd_input/reference")
    ->Apply(conv_shapes);
BENCHMARK(BM_conv_backward_weight<k::conv2d_backward_weight>)->Name("conv_bwd_weight/blocked")->Apply(conv_shapes);
BENCHMARK(BM_conv_backward_weight<k::reference::conv2d_backward_weight>)
    ->Name("conv_bwd_weight/reference")
    ->Apply(conv_shapes);
BENCHMARK(BM_resize<k::resize_bilinear_forward>)->Name("resize/blocked")->Arg(32)->Arg(64);
BENCHMARK(BM_resize<k::reference::resize_bilinear_forward>)->Name("resize/reference")->Arg(32)->Arg(64);

BENCHMARK_MAIN();
