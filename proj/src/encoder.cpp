#include "speg/encoder.hpp"

#include "speg/errors.hpp"

namespace speg {

ResidualBlock::ResidualBlock(nn::LayerContext& ctx, const std::string& name,
                             int channels, int mlp_ratio)
    : depthwise_(ctx, name + ".dw", channels, channels, 3,
                 {.stride = 1, .pad = 1, .dilation = 1, .groups = channels},
                 false),
      norm_(ctx, name + ".norm", channels),
      expand_(ctx, name + ".pw1", channels, channels * mlp_ratio, 1, {}),
      project_(ctx, name + ".pw2", channels * mlp_ratio, channels, 1, {}) {}

Var ResidualBlock::operator()(const Var& x, bool training) const {
  Var h = norm_(depthwise_(x), training);
  h = project_(ops::relu(expand_(h)));
  return ops::add(x, h);
}

Encoder::Encoder(const NetworkConfig& cfg, nn::ParameterStore& store,
                 nn::Rng& rng)
    : mode_(cfg.encoder_mode), channels_(cfg.stage_channels()) {
  nn::LayerContext ctx{store, rng, nn::ParamGroup::encoder};
  const auto& c = channels_;
  if (mode_ == EncoderMode::hierarchical) {
    stem_ = nn::Conv2d(ctx, "encoder.stem", 3, c[0], 4, {.stride = 4});
    stem_norm_ = nn::BatchNorm2d(ctx, "encoder.stem_norm", c[0]);
    for (int s = 0; s < 4; ++s) {
      if (s > 0) {
        const std::string name = "encoder.down" + std::to_string(s + 1);
        downsample_[s - 1] = nn::Conv2d(ctx, name, c[s - 1], c[s], 2, {.stride = 2});
        downsample_norm_[s - 1] = nn::BatchNorm2d(ctx, name + "_norm", c[s]);
      }
      for (int b = 0; b < cfg.encoder_depths[s]; ++b) {
        stage_blocks_[s].emplace_back(
            ctx,
            "encoder.stage" + std::to_string(s + 1) + ".block" + std::to_string(b),
            c[s], cfg.mlp_ratio);
      }
    }
  } else {
    patch_ = nn::Conv2d(ctx, "encoder.patch", 3, c[2], 16, {.stride = 16});
    patch_norm_ = nn::BatchNorm2d(ctx, "encoder.patch_norm", c[2]);
    for (int b = 0; b < cfg.flat_depth; ++b) {
      token_blocks_.emplace_back(ctx, "encoder.tokens.block" + std::to_string(b),
                                 c[2], cfg.mlp_ratio);
    }
    resample_[0] = nn::Conv2d(ctx, "encoder.to_stage1", c[2], c[0], 1, {});
    resample_[1] = nn::Conv2d(ctx, "encoder.to_stage2", c[2], c[1], 1, {});
    resample_[2] = nn::Conv2d(ctx, "encoder.to_stage3", c[2], c[2], 1, {});
    resample_[3] = nn::Conv2d(ctx, "encoder.to_stage4", c[2], c[3], 2, {.stride = 2});
  }
}

MultiScaleFeatures Encoder::forward(const Var& images, bool training) const {
  const Shape& s = images.shape();
  if (s.c != 3) {
    throw ShapeError("encoder expects 3 input channels, got " + s.str());
  }
  if (s.h <= 0 || s.w <= 0 || s.h % 32 != 0 || s.w % 32 != 0) {
    throw DimensionError("input " + std::to_string(s.h) + "x" +
                         std::to_string(s.w) + " is not divisible by 32");
  }
  return mode_ == EncoderMode::hierarchical ? hierarchical(images, training)
                                            : flat(images, training);
}

MultiScaleFeatures Encoder::hierarchical(const Var& x, bool training) const {
  MultiScaleFeatures out;
  Var h = stem_norm_(stem_(x), training);
  for (int s = 0; s < 4; ++s) {
    if (s > 0) h = downsample_norm_[s - 1](downsample_[s - 1](h), training);
    for (const auto& block : stage_blocks_[s]) h = block(h, training);
    out.stages[s] = h;
  }
  return out;
}

MultiScaleFeatures Encoder::flat(const Var& x, bool training) const {
  const Shape& s = x.shape();
  Var tokens = patch_norm_(patch_(x), training);
  for (const auto& block : token_blocks_) tokens = block(tokens, training);
  MultiScaleFeatures out;
  out.stages[0] = ops::resize_bilinear(resample_[0](tokens), s.h / 4, s.w / 4);
  out.stages[1] = ops::resize_bilinear(resample_[1](tokens), s.h / 8, s.w / 8);
  out.stages[2] = resample_[2](tokens);
  out.stages[3] = resample_[3](tokens);
  return out;
}

MultiScaleFeatures encode(const Encoder& encoder, const ImageBatch& batch,
                          bool training) {
  if (!batch.data.all_finite()) throw Error("image batch contains non-finite values");
  return encoder.forward(Var(batch.data), training);
}

WeightImportReport load_external_weights(
    const std::map<std::string, Tensor>& source, nn::ParameterStore& store) {
  WeightImportReport report;
  for (const auto& [name, tensor] : source) {
    const nn::ParamEntry* entry = store.find(name);
    if (!entry) {
      report.rejected.push_back(name + ": no such tensor");
      continue;
    }
    if (entry->var.shape() != tensor.shape()) {
      report.rejected.push_back(name + ": shape " + tensor.shape().str() +
                                " != " + entry->var.shape().str());
      continue;
    }
    Var target = entry->var;
    target.mutable_value() = tensor;
    ++report.loaded;
  }
  if (!source.empty() && report.loaded == 0) {
    std::string msg = "no external tensor matched the model:";
    for (const auto& r : report.rejected) msg += "\n  " + r;
    throw ConfigError(msg);
  }
  return report;
}

}  // namespace speg
