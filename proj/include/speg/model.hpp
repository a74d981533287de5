#pragma once

#include <cstdint>
#include <memory>

#include "speg/config.hpp"
#include "speg/context.hpp"
#include "speg/decoder.hpp"
#include "speg/edge.hpp"
#include "speg/encoder.hpp"
#include "speg/nn.hpp"

namespace speg {

struct ForwardOutputs {
  MultiScaleFeatures features;
  Var context;
  EdgeOutputs edge;
  DecodeOutputs decode;
};

/// Encoder, context integration, edge extraction and progressive decoder
/// wired together. Weights live in `parameters()`, in construction order.
class SpegNet {
 public:
  SpegNet(const NetworkConfig& cfg, std::uint64_t seed);
  SpegNet(const SpegNet&) = delete;
  SpegNet& operator=(const SpegNet&) = delete;

  ForwardOutputs forward(const Tensor& images, bool training) const;

  const NetworkConfig& config() const { return cfg_; }
  nn::ParameterStore& parameters() { return store_; }
  const nn::ParameterStore& parameters() const { return store_; }

  const Encoder& encoder() const { return *encoder_; }
  const ContextIntegration& context() const { return *context_; }
  const EdgeExtraction& edge() const { return *edge_; }
  const ProgressiveDecoder& decoder() const { return *decoder_; }

 private:
  static const NetworkConfig& checked(const NetworkConfig& cfg);

  NetworkConfig cfg_;
  nn::ParameterStore store_;
  nn::Rng rng_;
  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<ContextIntegration> context_;
  std::unique_ptr<EdgeExtraction> edge_;
  std::unique_ptr<ProgressiveDecoder> decoder_;
};

}  // namespace speg
