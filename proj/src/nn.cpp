#include "speg/nn.hpp"

#include <cmath>

#include "speg/errors.hpp"

namespace speg::nn {

Var ParameterStore::add(const std::string& name, Tensor init,
                        ParamGroup group, bool trainable) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name " + name);
  Var v(std::move(init), trainable);
  index_[name] = entries_.size();
  entries_.push_back({name, v, group, trainable});
  return v;
}

Var ParameterStore::create(const std::string& name, Tensor init,
                           ParamGroup group) {
  return add(name, std::move(init), group, true);
}

Var ParameterStore::create_buffer(const std::string& name, Tensor init,
                                  ParamGroup group) {
  return add(name, std::move(init), group, false);
}

const ParamEntry* ParameterStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t total = 0;
  for (const auto& e : entries_) {
    if (e.trainable) total += e.var.value().size();
  }
  return total;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) {
    Var v = e.var;
    v.zero_grad();
  }
}

Conv2d::Conv2d(LayerContext& ctx, const std::string& name, int in_channels,
               int out_channels, int kernel, ops::ConvSpec conv_spec,
               bool with_bias)
    : spec(conv_spec) {
  if (in_channels % spec.groups != 0 || out_channels % spec.groups != 0) {
    throw ConfigError(name + ": channels not divisible by groups");
  }
  const int per_group = in_channels / spec.groups;
  Tensor w({out_channels, per_group, kernel, kernel});
  const double stddev = std::sqrt(2.0 / (per_group * kernel * kernel));
  for (auto& v : w.values()) v = ctx.rng.normal(0.0, stddev);
  weight = ctx.store.create(name + ".weight", std::move(w), ctx.group);
  if (with_bias) {
    bias = ctx.store.create(name + ".bias", Tensor({1, out_channels, 1, 1}),
                            ctx.group);
  }
}

Var Conv2d::operator()(const Var& x) const {
  return ops::conv2d(x, weight, bias, spec);
}

BatchNorm2d::BatchNorm2d(LayerContext& ctx, const std::string& name,
                         int channels) {
  const Shape s{1, channels, 1, 1};
  gamma = ctx.store.create(name + ".gamma", Tensor(s, 1.0), ctx.group);
  beta = ctx.store.create(name + ".beta", Tensor(s, 0.0), ctx.group);
  running_mean =
      ctx.store.create_buffer(name + ".running_mean", Tensor(s, 0.0), ctx.group);
  running_var =
      ctx.store.create_buffer(name + ".running_var", Tensor(s, 1.0), ctx.group);
}

Var BatchNorm2d::operator()(const Var& x, bool training) const {
  Var mean = running_mean;
  Var var = running_var;
  ops::BatchNormState state{&mean.mutable_value(), &var.mutable_value()};
  return ops::batch_norm(x, gamma, beta, state, training);
}

ConvBnRelu::ConvBnRelu(LayerContext& ctx, const std::string& name,
                       int in_channels, int out_channels, int kernel,
                       ops::ConvSpec spec)
    : conv(ctx, name + ".conv", in_channels, out_channels, kernel, spec, false),
      bn(ctx, name + ".bn", out_channels) {}

Var ConvBnRelu::operator()(const Var& x, bool training) const {
  return ops::relu(bn(conv(x), training));
}

}  // namespace speg::nn
