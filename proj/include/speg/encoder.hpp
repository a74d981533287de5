#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "speg/config.hpp"
#include "speg/nn.hpp"

namespace speg {

/// Preprocessed images, [N, 3, H, W].
struct ImageBatch {
  Tensor data;
};

/// Encoder outputs X^1..X^4 at strides 4, 8, 16, 32.
struct MultiScaleFeatures {
  std::array<Var, 4> stages;
};

/// Depthwise 3x3 -> BN -> pointwise expand -> ReLU -> pointwise project,
/// added back onto the input.
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(nn::LayerContext& ctx, const std::string& name, int channels,
                int mlp_ratio);
  Var operator()(const Var& x, bool training) const;

 private:
  nn::Conv2d depthwise_;
  nn::BatchNorm2d norm_;
  nn::Conv2d expand_;
  nn::Conv2d project_;
};

class Encoder {
 public:
  Encoder(const NetworkConfig& cfg, nn::ParameterStore& store, nn::Rng& rng);

  // Throws DimensionError unless height and width are multiples of 32.
  MultiScaleFeatures forward(const Var& images, bool training) const;

 private:
  MultiScaleFeatures hierarchical(const Var& x, bool training) const;
  MultiScaleFeatures flat(const Var& x, bool training) const;

  EncoderMode mode_;
  std::array<int, 4> channels_{};
  // hierarchical
  nn::Conv2d stem_;
  nn::BatchNorm2d stem_norm_;
  std::array<nn::Conv2d, 3> downsample_;
  std::array<nn::BatchNorm2d, 3> downsample_norm_;
  std::array<std::vector<ResidualBlock>, 4> stage_blocks_;
  // flat
  nn::Conv2d patch_;
  nn::BatchNorm2d patch_norm_;
  std::vector<ResidualBlock> token_blocks_;
  std::array<nn::Conv2d, 4> resample_;
};

MultiScaleFeatures encode(const Encoder& encoder, const ImageBatch& batch,
                          bool training = false);

struct WeightImportReport {
  std::size_t loaded = 0;
  std::vector<std::string> rejected;  // "name: reason"
};

/// Copies every tensor whose name and shape match an entry of `store`.
/// Throws ConfigError, listing every reject, when a non-empty source
/// matches nothing.
WeightImportReport load_external_weights(
    const std::map<std::string, Tensor>& source, nn::ParameterStore& store);

}  // namespace speg
