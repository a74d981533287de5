#include "speg/ops.hpp"

#include <cmath>
#include <string>

#include "speg/errors.hpp"
#include "speg/kernels.hpp"

namespace speg::ops {

namespace {

struct Broadcast {
  std::size_t sn, sc, sh, sw;  // strides into b, zero on broadcast dims
};

Broadcast broadcast_strides(const Shape& a, const Shape& b, const char* op) {
  auto ok = [](int da, int db) { return db == da || db == 1; };
  if (!ok(a.n, b.n) || !ok(a.c, b.c) || !ok(a.h, b.h) || !ok(a.w, b.w)) {
    throw ShapeError(std::string(op) + ": cannot broadcast " + b.str() +
                     " to " + a.str());
  }
  const std::size_t w = 1;
  const std::size_t h = static_cast<std::size_t>(b.w);
  const std::size_t c = h * b.h;
  const std::size_t n = c * b.c;
  return {b.n == 1 ? 0 : n, b.c == 1 ? 0 : c, b.h == 1 ? 0 : h,
          b.w == 1 ? 0 : w};
}

// Calls f(index_a, index_b) for every element of a, in row-major order.
template <typename F>
void for_each_broadcast(const Shape& a, const Broadcast& bs, F&& f) {
  std::size_t ia = 0;
  for (int n = 0; n < a.n; ++n)
    for (int c = 0; c < a.c; ++c)
      for (int h = 0; h < a.h; ++h) {
        const std::size_t row = n * bs.sn + c * bs.sc + h * bs.sh;
        for (int w = 0; w < a.w; ++w, ++ia) f(ia, row + w * bs.sw);
      }
}

std::span<const double> bias_span(const Var& bias) {
  if (!bias.defined()) return {};
  return bias.value().span();
}

}  // namespace

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Var conv2d(const Var& x, const Var& weight, const Var& bias,
           const ConvSpec& spec) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  kernels::ConvGeometry g;
  g.batch = xs.n;
  g.in_channels = xs.c;
  g.in_h = xs.h;
  g.in_w = xs.w;
  g.out_channels = ws.n;
  g.kernel_h = ws.h;
  g.kernel_w = ws.w;
  g.stride = spec.stride;
  g.pad = spec.pad;
  g.dilation = spec.dilation;
  g.groups = spec.groups;
  if (ws.c * spec.groups != xs.c) {
    throw ShapeError("conv2d: weight " + ws.str() + " incompatible with input " +
                     xs.str());
  }
  if (bias.defined() && bias.value().size() != static_cast<std::size_t>(ws.n)) {
    throw ShapeError("conv2d: bias size mismatch");
  }
  g.validate();
  Tensor y({xs.n, ws.n, g.out_h(), g.out_w()});
  kernels::conv2d_forward(g, x.value().span(), weight.value().span(),
                          bias_span(bias), y.span());
  Node* xn = x.node();
  Node* wn = weight.node();
  Node* bn = bias.defined() ? bias.node() : nullptr;
  return make_result(std::move(y), {x, weight, bias},
                     [g, xn, wn, bn](const Tensor& gy) {
                       if (xn->requires_grad) {
                         kernels::conv2d_backward_input(g, gy.span(),
                                                        wn->value.span(),
                                                        xn->grad_buffer().span());
                       }
                       const bool want_b = bn && bn->requires_grad;
                       if (wn->requires_grad || want_b) {
                         std::span<double> db;
                         if (want_b) db = bn->grad_buffer().span();
                         kernels::conv2d_backward_weight(
                             g, xn->value.span(), gy.span(),
                             wn->grad_buffer().span(), db);
                       }
                     });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta,
               const BatchNormState& state, bool training) {
  const Shape s = x.shape();
  const int channels = s.c;
  if (gamma.value().size() != static_cast<std::size_t>(channels) ||
      beta.value().size() != static_cast<std::size_t>(channels)) {
    throw ShapeError("batch_norm: affine parameters do not match channels");
  }
  if (!state.running_mean || !state.running_var ||
      state.running_mean->size() != static_cast<std::size_t>(channels) ||
      state.running_var->size() != static_cast<std::size_t>(channels)) {
    throw ShapeError("batch_norm: running statistics do not match channels");
  }
  Tensor& running_mean = *state.running_mean;
  Tensor& running_var = *state.running_var;
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n) * plane;
  Tensor y(s);
  Tensor xhat(s);
  std::vector<double> inv_std(channels);
  const double* xv = x.value().data();
  const double* gv = gamma.value().data();
  const double* bv = beta.value().data();
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) {
    double mean = 0.0;
    double var = 0.0;
    if (training) {
      for (int n = 0; n < s.n; ++n) {
        const double* p = xv + (static_cast<std::size_t>(n) * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) mean += p[i];
      }
      mean /= count;
      for (int n = 0; n < s.n; ++n) {
        const double* p = xv + (static_cast<std::size_t>(n) * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = p[i] - mean;
          var += d * d;
        }
      }
      var /= count;
      const double unbiased = count > 1 ? var * count / (count - 1) : var;
      running_mean[c] =
          (1 - state.momentum) * running_mean[c] + state.momentum * mean;
      running_var[c] =
          (1 - state.momentum) * running_var[c] + state.momentum * unbiased;
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    const double is = 1.0 / std::sqrt(var + state.eps);
    inv_std[c] = is;
    for (int n = 0; n < s.n; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double h = (xv[off + i] - mean) * is;
        xhat[off + i] = h;
        y[off + i] = gv[c] * h + bv[c];
      }
    }
  }
  Node* xn = x.node();
  Node* gn = gamma.node();
  Node* bn = beta.node();
  return make_result(
      std::move(y), {x, gamma, beta},
      [s, xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std),
       training, count](const Tensor& gy) {
        const int channels = s.c;
        const std::size_t plane = s.plane();
        std::vector<double> dgamma(channels, 0.0);
        std::vector<double> dbeta(channels, 0.0);
#pragma omp parallel for schedule(static)
        for (int c = 0; c < channels; ++c) {
          double sg = 0.0;
          double sb = 0.0;
          for (int n = 0; n < s.n; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sg += gy[off + i] * xhat[off + i];
              sb += gy[off + i];
            }
          }
          dgamma[c] = sg;
          dbeta[c] = sb;
        }
        if (xn->requires_grad) {
          Tensor& dx = xn->grad_buffer();
          const double* gamma = gn->value.data();
#pragma omp parallel for schedule(static)
          for (int c = 0; c < channels; ++c) {
            const double k = gamma[c] * inv_std[c];
            for (int n = 0; n < s.n; ++n) {
              const std::size_t off = (static_cast<std::size_t>(n) * channels + c) * plane;
              for (std::size_t i = 0; i < plane; ++i) {
                if (training) {
                  dx[off + i] += k * (gy[off + i] - dbeta[c] / count -
                                      xhat[off + i] * dgamma[c] / count);
                } else {
                  dx[off + i] += k * gy[off + i];
                }
              }
            }
          }
        }
        if (gn->requires_grad) {
          Tensor& g = gn->grad_buffer();
          for (int c = 0; c < channels; ++c) g[c] += dgamma[c];
        }
        if (bn->requires_grad) {
          Tensor& g = bn->grad_buffer();
          for (int c = 0; c < channels; ++c) g[c] += dbeta[c];
        }
      });
}

Var relu(const Var& x) {
  Tensor y(x.shape());
  const double* xv = x.value().data();
  const auto n = static_cast<std::ptrdiff_t>(y.size());
#pragma omp parallel for simd schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) y[i] = xv[i] > 0 ? xv[i] : 0.0;
  Node* xn = x.node();
  return make_result(std::move(y), {x}, [xn](const Tensor& gy) {
    Tensor& dx = xn->grad_buffer();
    const double* xv = xn->value.data();
    const auto n = static_cast<std::ptrdiff_t>(dx.size());
#pragma omp parallel for simd schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      if (xv[i] > 0) dx[i] += gy[i];
    }
  });
}

Var sigmoid(const Var& x) {
  Tensor y(x.shape());
  const double* xv = x.value().data();
  const auto n = static_cast<std::ptrdiff_t>(y.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) y[i] = sigmoid(xv[i]);
  Node* xn = x.node();
  Tensor saved = y;
  return make_result(std::move(y), {x},
                     [xn, saved = std::move(saved)](const Tensor& gy) {
                       Tensor& dx = xn->grad_buffer();
                       const auto n = static_cast<std::ptrdiff_t>(dx.size());
#pragma omp parallel for simd schedule(static)
                       for (std::ptrdiff_t i = 0; i < n; ++i) {
                         dx[i] += gy[i] * saved[i] * (1.0 - saved[i]);
                       }
                     });
}

Var scale(const Var& x, double s) {
  Tensor y(x.shape());
  const double* xv = x.value().data();
  const auto n = static_cast<std::ptrdiff_t>(y.size());
#pragma omp parallel for simd schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) y[i] = s * xv[i];
  Node* xn = x.node();
  return make_result(std::move(y), {x}, [xn, s](const Tensor& gy) {
    Tensor& dx = xn->grad_buffer();
    const auto n = static_cast<std::ptrdiff_t>(dx.size());
#pragma omp parallel for simd schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) dx[i] += s * gy[i];
  });
}

Var add(const Var& a, const Var& b) {
  const Shape as = a.shape();
  const Broadcast bs = broadcast_strides(as, b.shape(), "add");
  Tensor y(as);
  const double* av = a.value().data();
  const double* bv = b.value().data();
  for_each_broadcast(as, bs, [&](std::size_t i, std::size_t j) {
    y[i] = av[i] + bv[j];
  });
  Node* an = a.node();
  Node* bn = b.node();
  return make_result(std::move(y), {a, b}, [as, bs, an, bn](const Tensor& gy) {
    if (an->requires_grad) accumulate(an->grad_buffer(), gy);
    if (bn->requires_grad) {
      Tensor& db = bn->grad_buffer();
      for_each_broadcast(as, bs,
                         [&](std::size_t i, std::size_t j) { db[j] += gy[i]; });
    }
  });
}

Var mul(const Var& a, const Var& b) {
  const Shape as = a.shape();
  const Broadcast bs = broadcast_strides(as, b.shape(), "mul");
  Tensor y(as);
  const double* av = a.value().data();
  const double* bv = b.value().data();
  for_each_broadcast(as, bs, [&](std::size_t i, std::size_t j) {
    y[i] = av[i] * bv[j];
  });
  Node* an = a.node();
  Node* bn = b.node();
  return make_result(std::move(y), {a, b}, [as, bs, an, bn](const Tensor& gy) {
    const double* av = an->value.data();
    const double* bv = bn->value.data();
    if (an->requires_grad) {
      Tensor& da = an->grad_buffer();
      for_each_broadcast(as, bs, [&](std::size_t i, std::size_t j) {
        da[i] += gy[i] * bv[j];
      });
    }
    if (bn->requires_grad) {
      Tensor& db = bn->grad_buffer();
      for_each_broadcast(as, bs, [&](std::size_t i, std::size_t j) {
        db[j] += gy[i] * av[i];
      });
    }
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape first = parts.front().shape();
  int channels = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: " + s.str() + " vs " + first.str());
    }
    channels += s.c;
  }
  const Shape out{first.n, channels, first.h, first.w};
  const std::size_t plane = out.plane();
  Tensor y(out);
  std::vector<Node*> nodes;
  std::vector<int> offsets;
  int offset = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    for (int n = 0; n < s.n; ++n) {
      const double* src = p.value().data() + static_cast<std::size_t>(n) * s.c * plane;
      double* dst = y.data() + (static_cast<std::size_t>(n) * channels + offset) * plane;
      std::copy_n(src, s.c * plane, dst);
    }
    nodes.push_back(p.node());
    offsets.push_back(offset);
    offset += s.c;
  }
  return make_result(std::move(y), parts,
                     [out, nodes, offsets](const Tensor& gy) {
                       const std::size_t plane = out.plane();
                       for (std::size_t k = 0; k < nodes.size(); ++k) {
                         Node* node = nodes[k];
                         if (!node->requires_grad) continue;
                         Tensor& dx = node->grad_buffer();
                         const int c = node->value.shape().c;
                         for (int n = 0; n < out.n; ++n) {
                           const double* src = gy.data() + (static_cast<std::size_t>(n) * out.c + offsets[k]) * plane;
                           double* dst = dx.data() + static_cast<std::size_t>(n) * c * plane;
                           for (std::size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Var global_avg_pool(const Var& x) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  Tensor y({s.n, s.c, 1, 1});
  const double* xv = x.value().data();
  for (int i = 0; i < s.n * s.c; ++i) {
    double acc = 0.0;
    for (std::size_t p = 0; p < plane; ++p) acc += xv[i * plane + p];
    y[i] = acc / static_cast<double>(plane);
  }
  Node* xn = x.node();
  return make_result(std::move(y), {x}, [s, xn](const Tensor& gy) {
    Tensor& dx = xn->grad_buffer();
    const std::size_t plane = s.plane();
    for (int i = 0; i < s.n * s.c; ++i) {
      const double g = gy[i] / static_cast<double>(plane);
      for (std::size_t p = 0; p < plane; ++p) dx[i * plane + p] += g;
    }
  });
}

Var expand_spatial(const Var& x, int h, int w) {
  const Shape s = x.shape();
  if (s.h != 1 || s.w != 1) {
    throw ShapeError("expand_spatial expects [N,C,1,1], got " + s.str());
  }
  const Shape out{s.n, s.c, h, w};
  const std::size_t plane = out.plane();
  Tensor y(out);
  for (int i = 0; i < s.n * s.c; ++i) {
    std::fill_n(y.data() + i * plane, plane, x.value()[i]);
  }
  Node* xn = x.node();
  return make_result(std::move(y), {x}, [out, xn](const Tensor& gy) {
    Tensor& dx = xn->grad_buffer();
    const std::size_t plane = out.plane();
    for (int i = 0; i < out.n * out.c; ++i) {
      double acc = 0.0;
      for (std::size_t p = 0; p < plane; ++p) acc += gy[i * plane + p];
      dx[i] += acc;
    }
  });
}

Var resize_bilinear(const Var& x, int out_h, int out_w) {
  const Shape s = x.shape();
  if (out_h <= 0 || out_w <= 0) throw ShapeError("resize_bilinear: empty output");
  if (s.h == out_h && s.w == out_w) return x;
  Tensor y({s.n, s.c, out_h, out_w});
  kernels::resize_bilinear_forward(s.n * s.c, s.h, s.w, out_h, out_w,
                                   x.value().span(), y.span());
  Node* xn = x.node();
  return make_result(std::move(y), {x}, [s, out_h, out_w, xn](const Tensor& gy) {
    kernels::resize_bilinear_backward(s.n * s.c, s.h, s.w, out_h, out_w,
                                      gy.span(), xn->grad_buffer().span());
  });
}

Var sum(const Var& x) {
  double acc = 0.0;
  for (double v : x.value().values()) acc += v;
  Node* xn = x.node();
  return make_result(Tensor::scalar(acc), {x}, [xn](const Tensor& gy) {
    Tensor& dx = xn->grad_buffer();
    const double g = gy[0];
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g;
  });
}

Var sum_product(const Var& x, const Tensor& weights) {
  if (weights.size() != x.value().size()) {
    throw ShapeError("sum_product: weight size mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) acc += x.value()[i] * weights[i];
  Node* xn = x.node();
  return make_result(Tensor::scalar(acc), {x}, [xn, weights](const Tensor& gy) {
    Tensor& dx = xn->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += gy[0] * weights[i];
  });
}

Var weighted_sum(const std::vector<Var>& scalars,
                 const std::vector<double>& weights) {
  if (scalars.size() != weights.size() || scalars.empty()) {
    throw ShapeError("weighted_sum: scalar/weight count mismatch");
  }
  double acc = weights[0] * scalars[0].value().item();
  for (std::size_t i = 1; i < scalars.size(); ++i) {
    acc = acc + weights[i] * scalars[i].value().item();
  }
  std::vector<Node*> nodes;
  for (const auto& s : scalars) nodes.push_back(s.node());
  return make_result(Tensor::scalar(acc), scalars,
                     [nodes, weights](const Tensor& gy) {
                       for (std::size_t i = 0; i < nodes.size(); ++i) {
                         if (nodes[i]->requires_grad) {
                           nodes[i]->grad_buffer()[0] += weights[i] * gy[0];
                         }
                       }
                     });
}

}  // namespace speg::ops
