#pragma once

#include <vector>

#include "speg/config.hpp"
#include "speg/encoder.hpp"
#include "speg/nn.hpp"

namespace speg {

/// Squeeze-and-excitation: gate = sigmoid(fc2(relu(fc1(avgpool(x))))),
/// output = x scaled per channel by the gate.
class ChannelRecalibration {
 public:
  ChannelRecalibration() = default;
  ChannelRecalibration(nn::LayerContext& ctx, const std::string& name,
                       int channels, int reduction);

  Var gate(const Var& x) const;
  Var operator()(const Var& x) const;

  nn::Conv2d squeeze;  // C -> max(1, C / reduction)
  nn::Conv2d excite;   // -> C
};

/// Efficient atrous pyramid: a 1x1 reduction, depthwise dilated 3x3
/// branches plus a global-pooling branch, fused by a 1x1 conv.
class EfficientAspp {
 public:
  EfficientAspp() = default;
  EfficientAspp(nn::LayerContext& ctx, const std::string& name,
                int in_channels, int out_channels,
                const std::vector<int>& dilations);

  Var operator()(const Var& x, bool training) const;

  int mid_channels() const { return mid_; }
  const std::vector<int>& dilations() const { return dilations_; }

  nn::ConvBnRelu reduce;
  std::vector<nn::Conv2d> branches;
  std::vector<nn::BatchNorm2d> branch_norms;
  nn::Conv2d pool_proj;
  nn::ConvBnRelu fuse;

 private:
  int mid_ = 0;
  std::vector<int> dilations_;
};

/// Aligns X2..X4 at stage-2 resolution, concatenates (X2, X3, X4), then
/// applies the enabled sub-blocks and a final 1x1 projection to the context
/// width.
class ContextIntegration {
 public:
  ContextIntegration(const NetworkConfig& cfg, nn::ParameterStore& store,
                     nn::Rng& rng);

  Var forward(const Var& x2, const Var& x3, const Var& x4, bool training) const;

  bool channel_attention_enabled() const { return use_se_; }
  bool easpp_enabled() const { return use_easpp_; }

  ChannelRecalibration se;
  EfficientAspp easpp;
  nn::ConvBnRelu projection;

 private:
  bool use_se_;
  bool use_easpp_;
};

Var integrate(const ContextIntegration& cfi, const MultiScaleFeatures& feats,
              bool training = false);

}  // namespace speg
