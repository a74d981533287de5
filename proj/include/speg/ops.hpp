#pragma once

#include <span>
#include <vector>

#include "speg/autograd.hpp"

namespace speg::ops {

struct ConvSpec {
  int stride = 1;
  int pad = 0;
  int dilation = 1;
  int groups = 1;
};

// weight: [out, in/groups, kh, kw]; bias may be undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias,
           const ConvSpec& spec);

struct BatchNormState {
  Tensor* running_mean = nullptr;  // [1, C, 1, 1]
  Tensor* running_var = nullptr;
  double momentum = 0.1;
  double eps = 1e-5;
};

// Training mode normalizes with batch statistics and updates the running
// estimates; evaluation mode uses the running estimates.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta,
               const BatchNormState& state, bool training);

Var relu(const Var& x);
Var sigmoid(const Var& x);
Var scale(const Var& x, double s);

// `b` broadcasts against `a`: each of its dims equals a's or is 1.
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);

Var concat_channels(const std::vector<Var>& parts);
Var global_avg_pool(const Var& x);
// [N, C, 1, 1] -> [N, C, h, w]
Var expand_spatial(const Var& x, int h, int w);
Var resize_bilinear(const Var& x, int out_h, int out_w);

// Sum of every entry (scalar result).
Var sum(const Var& x);
// Sum of x * weights for a constant weight tensor (scalar result).
Var sum_product(const Var& x, const Tensor& weights);
// ((w0*x0 + w1*x1) + w2*x2) + ... over scalar inputs, left to right.
Var weighted_sum(const std::vector<Var>& scalars,
                 const std::vector<double>& weights);

double sigmoid(double x);

}  // namespace speg::ops
