#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "speg/autograd.hpp"
#include "speg/ops.hpp"

namespace speg::nn {

// Encoder parameters train at the encoder learning rate, everything else
// at the head rate.
enum class ParamGroup { encoder, head };

struct ParamEntry {
  std::string name;
  Var var;
  ParamGroup group = ParamGroup::head;
  bool trainable = true;  // false for normalization running statistics
};

/// Ordered registry of every named tensor of a model. Insertion order is
/// the serialization and optimizer order.
class ParameterStore {
 public:
  Var create(const std::string& name, Tensor init, ParamGroup group);
  Var create_buffer(const std::string& name, Tensor init, ParamGroup group);

  const std::vector<ParamEntry>& entries() const { return entries_; }
  const ParamEntry* find(const std::string& name) const;
  std::size_t parameter_count() const;
  void zero_grad();

 private:
  Var add(const std::string& name, Tensor init, ParamGroup group,
          bool trainable);

  std::vector<ParamEntry> entries_;
  std::map<std::string, std::size_t> index_;
};

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double normal(double mean, double stddev) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

struct LayerContext {
  ParameterStore& store;
  Rng& rng;
  ParamGroup group;
};

class Conv2d {
 public:
  Conv2d() = default;
  // Kaiming-normal weights (fan-in), zero bias.
  Conv2d(LayerContext& ctx, const std::string& name, int in_channels,
         int out_channels, int kernel, ops::ConvSpec spec, bool bias = true);

  Var operator()(const Var& x) const;

  Var weight;
  Var bias;
  ops::ConvSpec spec;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(LayerContext& ctx, const std::string& name, int channels);

  Var operator()(const Var& x, bool training) const;

  Var gamma;
  Var beta;
  Var running_mean;
  Var running_var;
};

/// conv -> batch norm -> ReLU
class ConvBnRelu {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(LayerContext& ctx, const std::string& name, int in_channels,
             int out_channels, int kernel, ops::ConvSpec spec);

  Var operator()(const Var& x, bool training) const;

  Conv2d conv;
  BatchNorm2d bn;
};

}  // namespace speg::nn
