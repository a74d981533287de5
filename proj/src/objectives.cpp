#include "speg/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "speg/data.hpp"
#include "speg/errors.hpp"
#include "speg/kernels.hpp"
#include "speg/ops.hpp"

namespace speg {

namespace {

void require_same(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape " + a.str() + " vs " + b.str());
  }
}

// Floor applied to the argument of every logarithm.
double floor_prob(double p, double eps) { return std::max(p, eps); }

}  // namespace

Tensor boundary_weight_map(const Tensor& gt_mask, const Tensor& gt_edge,
                           double lambda_b) {
  require_same(gt_mask.shape(), gt_edge.shape(), "boundary_weight_map");
  Tensor w(gt_edge.shape());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 1.0 + lambda_b * gt_edge[i];
  return w;
}

Var structure_loss(const Var& logits, const Tensor& gt_mask,
                   const Tensor& weights, const LossWeights& lw) {
  const Shape s = logits.shape();
  require_same(s, gt_mask.shape(), "structure_loss");
  require_same(s, weights.shape(), "structure_loss weights");
  const std::size_t per = static_cast<std::size_t>(s.c) * s.plane();
  const double eps = lw.epsilon;
  Tensor prob(s);
  for (std::size_t i = 0; i < prob.size(); ++i) prob[i] = ops::sigmoid(logits.value()[i]);

  // Per-image sums kept for the backward pass.
  struct Sums {
    double weight = 0, bce = 0, inter = 0, uni = 0;
  };
  std::vector<Sums> sums(s.n);
  double loss = 0.0;
  for (int n = 0; n < s.n; ++n) {
    Sums& t = sums[n];
    for (std::size_t k = n * per; k < (n + 1) * per; ++k) {
      const double p = prob[k];
      const double g = gt_mask[k];
      const double w = weights[k];
      t.weight += w;
      t.bce += -w * (g * std::log(floor_prob(p, eps)) + (1 - g) * std::log(floor_prob(1 - p, eps)));
      t.inter += w * p * g;
      t.uni += w * (p + g - p * g);
    }
    const double bce = t.bce / t.weight;
    const double iou = 1.0 - (t.inter + eps) / (t.uni + eps);
    loss += lw.lambda_bce * bce + lw.lambda_iou * iou;
  }
  loss /= s.n;

  Node* ln = logits.node();
  return make_result(
      Tensor::scalar(loss), {logits},
      [s, per, eps, lw, prob = std::move(prob), sums = std::move(sums), gt_mask,
       weights, ln](const Tensor& gy) {
        Tensor& dz = ln->grad_buffer();
        const double scale = gy[0] / s.n;
        for (int n = 0; n < s.n; ++n) {
          const auto& t = sums[n];
          const double u = t.uni + eps;
          const double i = t.inter + eps;
          for (std::size_t k = n * per; k < (n + 1) * per; ++k) {
            const double p = prob[k];
            const double g = gt_mask[k];
            const double w = weights[k];
            const double dsig = p * (1 - p);
            double dbce = 0.0;
            if (p > eps) dbce -= g * (1 - p);
            if (1 - p > eps) dbce += (1 - g) * p;
            dbce *= w / t.weight;
            const double diou_dp = -(w * g * u - i * w * (1 - g)) / (u * u);
            dz[k] += scale * (lw.lambda_bce * dbce + lw.lambda_iou * diou_dp * dsig);
          }
        }
      });
}

Var edge_loss(const Var& logits, const Tensor& gt_edge, const LossWeights& lw) {
  const Shape s = logits.shape();
  require_same(s, gt_edge.shape(), "edge_loss");
  const std::size_t per = static_cast<std::size_t>(s.c) * s.plane();
  const double eps = lw.epsilon;
  const double alpha = lw.focal_alpha;
  const double gamma = lw.focal_gamma;
  Tensor prob(s);
  for (std::size_t i = 0; i < prob.size(); ++i) prob[i] = ops::sigmoid(logits.value()[i]);

  struct Sums {
    double inter = 0, total = 0;
  };
  std::vector<Sums> sums(s.n);
  double loss = 0.0;
  for (int n = 0; n < s.n; ++n) {
    double focal = 0.0;
    Sums& t = sums[n];
    for (std::size_t k = n * per; k < (n + 1) * per; ++k) {
      const double p = prob[k];
      const double g = gt_edge[k];
      const double pt = floor_prob(g > 0.5 ? p : 1 - p, eps);
      const double at = g > 0.5 ? alpha : 1 - alpha;
      focal += -at * std::pow(1 - pt, gamma) * std::log(pt);
      t.inter += p * g;
      t.total += p + g;
    }
    focal /= static_cast<double>(per);
    const double dice = 1.0 - (2 * t.inter + eps) / (t.total + eps);
    loss += focal + dice;
  }
  loss /= s.n;

  Node* ln = logits.node();
  return make_result(
      Tensor::scalar(loss), {logits},
      [s, per, eps, alpha, gamma, prob = std::move(prob), sums = std::move(sums),
       gt_edge, ln](const Tensor& gy) {
        Tensor& dz = ln->grad_buffer();
        const double scale = gy[0] / s.n;
        for (int n = 0; n < s.n; ++n) {
          const auto& t = sums[n];
          const double den = t.total + eps;
          const double num = 2 * t.inter + eps;
          for (std::size_t k = n * per; k < (n + 1) * per; ++k) {
            const double p = prob[k];
            const double g = gt_edge[k];
            const bool pos = g > 0.5;
            const double raw_pt = pos ? p : 1 - p;
            const double at = pos ? alpha : 1 - alpha;
            const double dsig = p * (1 - p);
            double dfocal = 0.0;
            if (raw_pt > eps && raw_pt < 1.0) {
              const double pt = raw_pt;
              const double one_m = 1 - pt;
              const double d_dpt =
                  -at * (-gamma * std::pow(one_m, gamma - 1) * std::log(pt) +
                         std::pow(one_m, gamma) / pt);
              dfocal = d_dpt * (pos ? dsig : -dsig) / static_cast<double>(per);
            }
            const double ddice_dp = -(2 * g * den - num) / (den * den);
            dz[k] += scale * (dfocal + ddice_dp * dsig);
          }
        }
      });
}

LossBreakdown combine_losses(const std::vector<Var>& seg_losses,
                             const Var& edge, const LossWeights& lw) {
  lw.validate(static_cast<int>(seg_losses.size()));
  std::vector<Var> terms = seg_losses;
  std::vector<double> weights = lw.stage_weights;
  terms.push_back(edge);
  weights.push_back(lw.lambda_e);
  LossBreakdown out;
  out.total_var = ops::weighted_sum(terms, weights);
  out.total = out.total_var.value().item();
  out.edge_loss = edge.value().item();
  if (seg_losses.size() == 3) {
    for (int i = 0; i < 3; ++i) out.seg_losses[i] = seg_losses[i].value().item();
  } else {
    out.seg_losses[2] = seg_losses[0].value().item();
  }
  return out;
}

Tensor resample_mask(const Tensor& mask, int h, int w) {
  const Shape s = mask.shape();
  if (s.h == h && s.w == w) return mask;
  Tensor out({s.n, s.c, h, w});
  kernels::resize_bilinear_forward(s.n * s.c, s.h, s.w, h, w, mask.span(),
                                   out.span());
  for (auto& v : out.values()) v = v >= 0.5 ? 1.0 : 0.0;
  return out;
}

Tensor scaled_edge_band(const Tensor& mask, int full_size) {
  const Shape s = mask.shape();
  const double f = static_cast<double>(s.h) / full_size;
  const int radius = std::max(0, static_cast<int>(std::lround((kEdgeBandWidth * f - 1) / 2)));
  Tensor out(s);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      Plane p(s.h, s.w);
      const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * s.plane();
      std::copy_n(mask.data() + off, s.plane(), p.data.begin());
      const Plane e = make_edge_map(p, 2 * radius + 1);
      std::copy(e.data.begin(), e.data.end(), out.data() + off);
    }
  }
  return out;
}

Tensor max_pool(const Tensor& x, int factor) {
  const Shape s = x.shape();
  if (factor <= 0 || s.h % factor != 0 || s.w % factor != 0) {
    throw ShapeError("max_pool: " + s.str() + " not divisible by " + std::to_string(factor));
  }
  Tensor out({s.n, s.c, s.h / factor, s.w / factor});
  const Shape o = out.shape();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < o.h; ++y)
        for (int xx = 0; xx < o.w; ++xx) {
          double m = -INFINITY;
          for (int dy = 0; dy < factor; ++dy)
            for (int dx = 0; dx < factor; ++dx) {
              m = std::max(m, x.at(n, c, y * factor + dy, xx * factor + dx));
            }
          out.at(n, c, y, xx) = m;
        }
  return out;
}

LossBreakdown total_loss(const DecodeOutputs& outputs, const EdgeOutputs& edge,
                         const Tensor& gt_mask, const Tensor& gt_edge,
                         const LossWeights& lw) {
  require_same(gt_mask.shape(), gt_edge.shape(), "total_loss ground truth");
  const int full = gt_mask.shape().h;
  std::vector<Var> preds;
  if (outputs.p1.defined()) preds = {outputs.p1, outputs.p2, outputs.p3};
  else preds = {outputs.p3};
  std::vector<Var> seg;
  for (const Var& p : preds) {
    const Shape& ps = p.shape();
    if (ps.h == gt_mask.shape().h && ps.w == gt_mask.shape().w) {
      seg.push_back(structure_loss(p, gt_mask, boundary_weight_map(gt_mask, gt_edge, lw.lambda_b), lw));
    } else {
      const Tensor m = resample_mask(gt_mask, ps.h, ps.w);
      const Tensor e = scaled_edge_band(m, full);
      seg.push_back(structure_loss(p, m, boundary_weight_map(m, e, lw.lambda_b), lw));
    }
  }
  const Shape& es = edge.logits.shape();
  if (gt_edge.shape().h % es.h != 0) {
    throw ShapeError("edge logits " + es.str() + " do not tile ground truth " +
                     gt_edge.shape().str());
  }
  const Tensor edge_low = max_pool(gt_edge, gt_edge.shape().h / es.h);
  Var e = edge_loss(edge.logits, edge_low, lw);
  return combine_losses(seg, e, lw);
}

}  // namespace speg
