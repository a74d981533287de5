#pragma once

#include <array>
#include <vector>

#include "speg/config.hpp"
#include "speg/decoder.hpp"
#include "speg/edge.hpp"

namespace speg {

struct LossBreakdown {
  std::array<double, 3> seg_losses{};  // coarse to fine; unused slots are 0
  double edge_loss = 0.0;
  double total = 0.0;
  Var total_var;  // differentiable total
};

// 1 + lambda_b * edge, elementwise.
Tensor boundary_weight_map(const Tensor& gt_mask, const Tensor& gt_edge,
                           double lambda_b);

// Per image: lambda_bce * weighted BCE + lambda_iou * weighted IoU loss,
// averaged over the batch. Arguments of logarithms are floored at eps.
Var structure_loss(const Var& logits, const Tensor& gt_mask,
                   const Tensor& weights, const LossWeights& lw);

// Per image: focal (mean over pixels) + dice, averaged over the batch.
Var edge_loss(const Var& logits, const Tensor& gt_edge, const LossWeights& lw);

// total = ((w1 s1 + w2 s2) + w3 s3) + lambda_e e for three stages,
// w1 s1 + lambda_e e for one.
LossBreakdown combine_losses(const std::vector<Var>& seg_losses,
                             const Var& edge, const LossWeights& lw);

// Full objective. gt_mask / gt_edge are [N,1,H,W] at the preprocessed
// input resolution; targets for coarser outputs are derived internally.
LossBreakdown total_loss(const DecodeOutputs& outputs, const EdgeOutputs& edge,
                         const Tensor& gt_mask, const Tensor& gt_edge,
                         const LossWeights& lw);

// Mask resampled to h x w (bilinear, re-binarized at 0.5).
Tensor resample_mask(const Tensor& mask, int h, int w);
// Edge band of a (binary) mask batch with a band width scaled from 5 px
// at `full_size` to the mask's own resolution.
Tensor scaled_edge_band(const Tensor& mask, int full_size);
// Non-overlapping max pooling by an integer factor.
Tensor max_pool(const Tensor& x, int factor);

}  // namespace speg
