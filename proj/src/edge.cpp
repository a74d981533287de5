#include "speg/edge.hpp"

#include "speg/errors.hpp"

namespace speg {

EdgeExtraction::EdgeExtraction(const NetworkConfig& cfg,
                               nn::ParameterStore& store, nn::Rng& rng) {
  nn::LayerContext ctx{store, rng, nn::ParamGroup::head};
  const int width = cfg.edge_width();
  int in = cfg.context_width();
  for (int i = 0; i < cfg.efe_depth; ++i) {
    blocks.emplace_back(ctx, "efe.block" + std::to_string(i), in, width, 3,
                        ops::ConvSpec{.stride = 1, .pad = 1});
    in = width;
  }
  head = nn::Conv2d(ctx, "efe.head", width, 1, 1, {});
}

EdgeOutputs EdgeExtraction::forward(const Var& context, bool training) const {
  const int expected = blocks.front().conv.weight.shape().c;
  if (context.shape().c != expected) {
    throw ShapeError("edge extraction expects " + std::to_string(expected) +
                     " context channels, got " + context.shape().str());
  }
  Var h = context;
  for (const auto& block : blocks) h = block(h, training);
  return {h, head(h)};
}

}  // namespace speg
