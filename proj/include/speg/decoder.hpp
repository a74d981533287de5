#pragma once

#include <array>
#include <vector>

#include "speg/config.hpp"
#include "speg/edge.hpp"
#include "speg/nn.hpp"

namespace speg {

struct DecodeOutputs {
  Var p1;  // [N,1,H/4,W/4]; undefined in single-stage mode
  Var p2;  // [N,1,H/2,W/2]; undefined in single-stage mode
  Var p3;  // [N,1,H,W]
  Tensor mask;
  std::vector<Var> stage_features;
};

/// Edge-modulated blend of stage features:
///   V = (1 - alpha) U + alpha (U * sigmoid(E) + Proj(F_edge))
/// with E and F_edge bilinearly resampled to U. alpha == 0 returns U
/// itself. A defined prior is appended as sigmoid(prior) after the blend.
Var fuse_stage(const Var& u, const EdgeOutputs& edge, const Var& prior,
               double alpha, const nn::Conv2d& edge_projection);

class DecoderStage {
 public:
  DecoderStage() = default;
  DecoderStage(nn::LayerContext& ctx, const std::string& name,
               int in_channels, int width, int edge_channels, bool has_prior);

  struct Result {
    Var features;
    Var logits;
  };

  // Resamples `input` to out_h x out_w, projects, fuses, refines.
  Result forward(const Var& input, int out_h, int out_w,
                 const EdgeOutputs& edge, const Var& prior, double alpha,
                 bool training) const;

  nn::Conv2d input_projection;
  nn::Conv2d edge_projection;
  nn::ConvBnRelu refine1;
  nn::ConvBnRelu refine2;
  nn::Conv2d head;
  bool has_prior = false;
};

class ProgressiveDecoder {
 public:
  ProgressiveDecoder(const NetworkConfig& cfg, nn::ParameterStore& store,
                     nn::Rng& rng);

  // `image_h` x `image_w` is the preprocessed input size.
  DecodeOutputs forward(const Var& context, const EdgeOutputs& edge,
                        int image_h, int image_w, bool training) const;

  const std::vector<DecoderStage>& stages() const { return stages_; }
  const std::array<double, 3>& alphas() const { return alphas_; }

 private:
  std::vector<DecoderStage> stages_;
  std::array<double, 3> alphas_{};
  double threshold_;
  int decoder_stages_;
};

// mask = [sigmoid(logits) > threshold]; threshold must lie in (0,1).
Tensor binarize(const Tensor& logits, double threshold);

}  // namespace speg
