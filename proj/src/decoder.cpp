#include "speg/decoder.hpp"

#include "speg/errors.hpp"

namespace speg {

Var fuse_stage(const Var& u, const EdgeOutputs& edge, const Var& prior,
               double alpha, const nn::Conv2d& edge_projection) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("edge influence must lie in [0,1], got " + format_double(alpha));
  }
  const Shape& s = u.shape();
  Var v = u;
  if (alpha > 0.0) {
    Var gate = ops::sigmoid(ops::resize_bilinear(edge.logits, s.h, s.w));
    Var feat = edge_projection(ops::resize_bilinear(edge.features, s.h, s.w));
    Var guided = ops::add(ops::mul(u, gate), feat);
    v = ops::add(ops::scale(u, 1.0 - alpha), ops::scale(guided, alpha));
  }
  if (prior.defined()) {
    v = ops::concat_channels({v, ops::sigmoid(ops::resize_bilinear(prior, s.h, s.w))});
  }
  return v;
}

DecoderStage::DecoderStage(nn::LayerContext& ctx, const std::string& name,
                           int in_channels, int width, int edge_channels,
                           bool prior)
    : input_projection(ctx, name + ".in_proj", in_channels, width, 1, {}),
      edge_projection(ctx, name + ".edge_proj", edge_channels, width, 1, {}),
      refine1(ctx, name + ".refine1", width + (prior ? 1 : 0), width, 3,
              {.stride = 1, .pad = 1}),
      refine2(ctx, name + ".refine2", width, width, 3, {.stride = 1, .pad = 1}),
      head(ctx, name + ".head", width, 1, 1, {}),
      has_prior(prior) {}

DecoderStage::Result DecoderStage::forward(const Var& input, int out_h,
                                           int out_w, const EdgeOutputs& edge,
                                           const Var& prior, double alpha,
                                           bool training) const {
  if (has_prior != prior.defined()) {
    throw ShapeError("decoder stage prior presence does not match its construction");
  }
  Var u = input_projection(ops::resize_bilinear(input, out_h, out_w));
  Var v = fuse_stage(u, edge, prior, alpha, edge_projection);
  Var d = refine2(refine1(v, training), training);
  return {d, head(d)};
}

ProgressiveDecoder::ProgressiveDecoder(const NetworkConfig& cfg,
                                       nn::ParameterStore& store, nn::Rng& rng)
    : threshold_(cfg.mask_threshold), decoder_stages_(cfg.decoder_stages) {
  nn::LayerContext ctx{store, rng, nn::ParamGroup::head};
  const auto widths = cfg.decoder_widths();
  const int edge_width = cfg.edge_width();
  const auto influence = cfg.effective_edge_influence();
  if (decoder_stages_ == 1) {
    stages_.emplace_back(ctx, "ped.single", cfg.context_width(), widths[2],
                         edge_width, false);
    alphas_ = {0.0, influence[1], 0.0};
  } else {
    int in = cfg.context_width();
    for (int i = 0; i < 3; ++i) {
      stages_.emplace_back(ctx, "ped.stage" + std::to_string(i + 1), in,
                           widths[i], edge_width, i > 0);
      in = widths[i];
    }
    alphas_ = influence;
  }
}

DecodeOutputs ProgressiveDecoder::forward(const Var& context,
                                          const EdgeOutputs& edge, int image_h,
                                          int image_w, bool training) const {
  DecodeOutputs out;
  if (decoder_stages_ == 1) {
    auto r = stages_[0].forward(context, image_h, image_w, edge, Var(),
                                alphas_[1], training);
    out.p3 = r.logits;
    out.stage_features.push_back(r.features);
  } else {
    Var features = context;
    Var prior;
    std::array<Var*, 3> slots{&out.p1, &out.p2, &out.p3};
    for (int i = 0; i < 3; ++i) {
      const int div = 4 >> i;  // 4, 2, 1
      auto r = stages_[i].forward(features, image_h / div, image_w / div, edge,
                                  prior, alphas_[i], training);
      *slots[i] = r.logits;
      out.stage_features.push_back(r.features);
      features = r.features;
      prior = r.logits;
    }
  }
  out.mask = binarize(out.p3.value(), threshold_);
  return out;
}

Tensor binarize(const Tensor& logits, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("mask threshold must lie in (0,1), got " + format_double(threshold));
  }
  Tensor mask(logits.shape());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    mask[i] = ops::sigmoid(logits[i]) > threshold ? 1.0 : 0.0;
  }
  return mask;
}

}  // namespace speg
