#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "speg/autograd.hpp"
#include "speg/nn.hpp"
#include "speg/ops.hpp"
#include "speg/tensor.hpp"

namespace testutil {

using speg::Shape;
using speg::Tensor;
using speg::Var;

inline Tensor random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(s);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && a.values() == b.values();
}

// Relative error |a - n| / max(|a|, |n|, floor) between analytic and
// central-difference gradients of the scalar f() with respect to every
// entry of every var. Returns the worst entry.
inline double gradcheck(const std::function<Var()>& f, std::vector<Var> vars,
                        double h = 1e-6, double floor = 1e-3) {
  for (auto& v : vars) v.zero_grad();
  Var y = f();
  speg::backward(y);
  std::vector<Tensor> analytic;
  for (auto& v : vars) analytic.push_back(v.grad());
  double worst = 0.0;
  for (std::size_t k = 0; k < vars.size(); ++k) {
    Tensor& x = vars[k].mutable_value();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double orig = x[i];
      x[i] = orig + h;
      const double fp = f().value().item();
      x[i] = orig - h;
      const double fm = f().value().item();
      x[i] = orig;
      const double num = (fp - fm) / (2 * h);
      const double a = analytic[k][i];
      const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), floor});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

// Scalar probe <y, r> for a fixed random r, making any output checkable.
inline Var project(const Var& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return speg::ops::sum_product(y, random_tensor(y.shape(), rng));
}

inline Var param(const Tensor& t) { return Var(t, true); }

// Direct nested-loop convolution, independent of the library kernels.
inline Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int pad,
                         int dilation, int groups) {
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  const int oh = (xs.h + 2 * pad - dilation * (ws.h - 1) - 1) / stride + 1;
  const int ow = (xs.w + 2 * pad - dilation * (ws.w - 1) - 1) / stride + 1;
  const int cin_g = xs.c / groups;
  const int cout_g = ws.n / groups;
  Tensor y({xs.n, ws.n, oh, ow});
  for (int n = 0; n < xs.n; ++n)
    for (int o = 0; o < ws.n; ++o) {
      const int g = o / cout_g;
      for (int r = 0; r < oh; ++r)
        for (int c = 0; c < ow; ++c) {
          double acc = bias ? (*bias)[o] : 0.0;
          for (int i = 0; i < cin_g; ++i)
            for (int kr = 0; kr < ws.h; ++kr)
              for (int kc = 0; kc < ws.w; ++kc) {
                const int ir = r * stride - pad + kr * dilation;
                const int ic = c * stride - pad + kc * dilation;
                if (ir < 0 || ic < 0 || ir >= xs.h || ic >= xs.w) continue;
                acc += w.at(o, i, kr, kc) * x.at(n, g * cin_g + i, ir, ic);
              }
          y.at(n, o, r, c) = acc;
        }
    }
  return y;
}

// Evaluation-mode batch norm from its stored statistics.
inline Tensor naive_bn_eval(const Tensor& x, const speg::nn::BatchNorm2d& bn, double eps = 1e-5) {
  Tensor y = x;
  const Shape s = x.shape();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w) {
          const double m = bn.running_mean.value()[c];
          const double v = bn.running_var.value()[c];
          y.at(n, c, h, w) = (x.at(n, c, h, w) - m) / std::sqrt(v + eps) * bn.gamma.value()[c] +
                             bn.beta.value()[c];
        }
  return y;
}

inline Tensor naive_relu(Tensor x) {
  for (auto& v : x.values()) v = std::max(v, 0.0);
  return x;
}

inline Tensor naive_conv_bn_relu(const Tensor& x, const speg::nn::ConvBnRelu& m, int pad = 0) {
  return naive_relu(naive_bn_eval(naive_conv(x, m.conv.weight.value(), nullptr, 1, pad, 1, 1), m.bn));
}

// Randomizes running statistics and affine terms so evaluation-mode
// normalization is not the identity.
inline void randomize_norms(speg::nn::ParameterStore& store, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.5, 1.5), c(-0.3, 0.3);
  for (const auto& e : store.entries()) {
    const auto& n = e.name;
    Var v = e.var;
    auto ends = [&](const std::string& suf) {
      return n.size() >= suf.size() && n.compare(n.size() - suf.size(), suf.size(), suf) == 0;
    };
    if (ends(".running_var") || ends(".gamma")) {
      for (auto& x : v.mutable_value().values()) x = u(rng);
    } else if (ends(".running_mean") || ends(".beta")) {
      for (auto& x : v.mutable_value().values()) x = c(rng);
    }
  }
}

}  // namespace testutil
