#pragma once

#include <vector>

#include "speg/config.hpp"
#include "speg/nn.hpp"

namespace speg {

/// Boundary features and raw (pre-sigmoid) edge logits at context
/// resolution.
struct EdgeOutputs {
  Var features;  // [N, edge_channels, H/8, W/8]
  Var logits;    // [N, 1, H/8, W/8]
};

class EdgeExtraction {
 public:
  EdgeExtraction(const NetworkConfig& cfg, nn::ParameterStore& store,
                 nn::Rng& rng);

  EdgeOutputs forward(const Var& context, bool training) const;

  std::vector<nn::ConvBnRelu> blocks;  // 3x3, efe_depth of them
  nn::Conv2d head;                     // 1x1 with bias
};

}  // namespace speg
