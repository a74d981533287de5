#include "speg/model.hpp"

#include <memory>

namespace speg {

const NetworkConfig& SpegNet::checked(const NetworkConfig& cfg) {
  cfg.validate();
  return cfg;
}

SpegNet::SpegNet(const NetworkConfig& cfg, std::uint64_t seed)
    : cfg_(checked(cfg)), rng_(seed) {
  encoder_ = std::make_unique<Encoder>(cfg_, store_, rng_);
  context_ = std::make_unique<ContextIntegration>(cfg_, store_, rng_);
  edge_ = std::make_unique<EdgeExtraction>(cfg_, store_, rng_);
  decoder_ = std::make_unique<ProgressiveDecoder>(cfg_, store_, rng_);
}

ForwardOutputs SpegNet::forward(const Tensor& images, bool training) const {
  ForwardOutputs out;
  out.features = encoder_->forward(Var(images), training);
  out.context = integrate(*context_, out.features, training);
  out.edge = edge_->forward(out.context, training);
  const Shape& s = images.shape();
  out.decode = decoder_->forward(out.context, out.edge, s.h, s.w, training);
  return out;
}

}  // namespace speg
