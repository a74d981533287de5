#include "speg/context.hpp"

#include <algorithm>
#include <iostream>
#include <mutex>

#include "speg/errors.hpp"

namespace speg {

ChannelRecalibration::ChannelRecalibration(nn::LayerContext& ctx,
                                           const std::string& name,
                                           int channels, int reduction)
    : squeeze(ctx, name + ".fc1", channels, std::max(1, channels / reduction), 1, {}),
      excite(ctx, name + ".fc2", std::max(1, channels / reduction), channels, 1, {}) {}

Var ChannelRecalibration::gate(const Var& x) const {
  return ops::sigmoid(excite(ops::relu(squeeze(ops::global_avg_pool(x)))));
}

Var ChannelRecalibration::operator()(const Var& x) const {
  return ops::mul(x, gate(x));
}

EfficientAspp::EfficientAspp(nn::LayerContext& ctx, const std::string& name,
                             int in_channels, int out_channels,
                             const std::vector<int>& dilations)
    : mid_(std::max(1, out_channels / 2)), dilations_(dilations) {
  reduce = nn::ConvBnRelu(ctx, name + ".reduce", in_channels, mid_, 1, {});
  for (int d : dilations_) {
    const std::string branch = name + ".branch_d" + std::to_string(d);
    branches.emplace_back(ctx, branch, mid_, mid_, 3,
                          ops::ConvSpec{.stride = 1, .pad = d, .dilation = d, .groups = mid_},
                          false);
    branch_norms.emplace_back(ctx, branch + "_norm", mid_);
  }
  pool_proj = nn::Conv2d(ctx, name + ".pool_proj", mid_, mid_, 1, {});
  const int fused = mid_ * static_cast<int>(dilations_.size() + 1);
  fuse = nn::ConvBnRelu(ctx, name + ".fuse", fused, out_channels, 1, {});
}

Var EfficientAspp::operator()(const Var& x, bool training) const {
  const Shape& s = x.shape();
  const int largest = dilations_.empty() ? 0 : *std::max_element(dilations_.begin(), dilations_.end());
  if (std::min(s.h, s.w) < largest + 1) {
    static std::once_flag warned;
    std::call_once(warned, [&] {
      std::cerr << "warning: e-ASPP input " << s.h << "x" << s.w
                << " is smaller than the dilation-" << largest
                << " receptive step; outer taps read zero padding\n";
    });
  }
  Var r = reduce(x, training);
  std::vector<Var> parts;
  parts.reserve(branches.size() + 1);
  for (std::size_t i = 0; i < branches.size(); ++i) {
    parts.push_back(ops::relu(branch_norms[i](branches[i](r), training)));
  }
  Var pooled = ops::relu(pool_proj(ops::global_avg_pool(r)));
  parts.push_back(ops::expand_spatial(pooled, s.h, s.w));
  return fuse(ops::concat_channels(parts), training);
}

ContextIntegration::ContextIntegration(const NetworkConfig& cfg,
                                       nn::ParameterStore& store, nn::Rng& rng)
    : use_se_(cfg.enable_channel_attention), use_easpp_(cfg.enable_easpp) {
  nn::LayerContext ctx{store, rng, nn::ParamGroup::head};
  const auto c = cfg.stage_channels();
  const int concat = c[1] + c[2] + c[3];
  const int width = cfg.context_width();
  if (use_se_) se = ChannelRecalibration(ctx, "cfi.se", concat, cfg.se_reduction);
  if (use_easpp_) easpp = EfficientAspp(ctx, "cfi.easpp", concat, width, cfg.easpp_dilations);
  projection = nn::ConvBnRelu(ctx, "cfi.proj", use_easpp_ ? width : concat, width, 1, {});
}

Var ContextIntegration::forward(const Var& x2, const Var& x3, const Var& x4,
                                bool training) const {
  const Shape& s2 = x2.shape();
  const Shape& s3 = x3.shape();
  const Shape& s4 = x4.shape();
  if (s3.h * 2 != s2.h || s3.w * 2 != s2.w || s4.h * 4 != s2.h ||
      s4.w * 4 != s2.w || s3.n != s2.n || s4.n != s2.n) {
    throw ShapeError("context integration: stages " + s2.str() + ", " +
                     s3.str() + ", " + s4.str() +
                     " do not derive from one input size");
  }
  Var fused = ops::concat_channels({x2, ops::resize_bilinear(x3, s2.h, s2.w),
                                    ops::resize_bilinear(x4, s2.h, s2.w)});
  if (use_se_) fused = se(fused);
  if (use_easpp_) fused = easpp(fused, training);
  return projection(fused, training);
}

Var integrate(const ContextIntegration& cfi, const MultiScaleFeatures& feats,
              bool training) {
  return cfi.forward(feats.stages[1], feats.stages[2], feats.stages[3], training);
}

}  // namespace speg
