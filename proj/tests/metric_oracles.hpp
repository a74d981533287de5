#pragma once

// Straight-line evaluations of the metric definitions, written without
// the library's helpers.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "speg/metrics.hpp"

namespace oracle {

using speg::Plane;
namespace m = speg::metrics;

inline constexpr double kEps = std::numeric_limits<double>::epsilon();

inline double oracle_mae(const Plane& p, const Plane& g) {
  double s = 0;
  for (int r = 0; r < g.height; ++r)
    for (int c = 0; c < g.width; ++c) s += std::abs(p(r, c) - g(r, c));
  return s / (g.height * g.width);
}

inline double oracle_s(const Plane& p, const Plane& g) {
  const int h = g.height, w = g.width;
  const double n = h * w;
  double fg = 0, pm = 0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      fg += g(r, c);
      pm += p(r, c);
    }
  const double y = fg / n;
  if (y == 0) return std::clamp(1 - pm / n, 0.0, 1.0);
  if (y == 1) return std::clamp(pm / n, 0.0, 1.0);

  // object term
  auto score = [](const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double mu = 0;
    for (double x : v) mu += x;
    mu /= v.size();
    double var = 0;
    for (double x : v) var += (x - mu) * (x - mu);
    const double sd = v.size() > 1 ? std::sqrt(var / (v.size() - 1)) : 0.0;
    return 2 * mu / (mu * mu + 1 + sd + kEps);
  };
  std::vector<double> a, b;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      if (g(r, c) == 1) a.push_back(p(r, c));
      else b.push_back(1 - p(r, c));
    }
  const double obj = y * score(a) + (1 - y) * score(b);

  // region term split at the gt centroid (1-based, banker's rounding)
  double sr = 0, sc = 0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      if (g(r, c) == 1) {
        sr += r;
        sc += c;
      }
  const int cx = std::min(w, (int)std::nearbyint(sc / fg) + 1);
  const int cy = std::min(h, (int)std::nearbyint(sr / fg) + 1);
  auto ssim = [&](int r0, int r1, int c0, int c1) {
    const double k = (r1 - r0) * (c1 - c0);
    if (k == 0) return 0.0;
    double x = 0, yy = 0;
    for (int r = r0; r < r1; ++r)
      for (int c = c0; c < c1; ++c) {
        x += p(r, c);
        yy += g(r, c);
      }
    x /= k;
    yy /= k;
    double vx = 0, vy = 0, cxy = 0;
    for (int r = r0; r < r1; ++r)
      for (int c = c0; c < c1; ++c) {
        vx += (p(r, c) - x) * (p(r, c) - x);
        vy += (g(r, c) - yy) * (g(r, c) - yy);
        cxy += (p(r, c) - x) * (g(r, c) - yy);
      }
    const double d = std::max(k - 1, 1.0);
    vx /= d;
    vy /= d;
    cxy /= d;
    const double num = 4 * x * yy * cxy;
    const double den = (x * x + yy * yy) * (vx + vy);
    if (num != 0) return num / (den + kEps);
    return den == 0 ? 1.0 : 0.0;
  };
  const double tl = (double)cx * cy / n, tr = (double)(w - cx) * cy / n, bl = (double)cx * (h - cy) / n;
  const double reg = tl * ssim(0, cy, 0, cx) + tr * ssim(0, cy, cx, w) + bl * ssim(cy, h, 0, cx) +
                     (1 - tl - tr - bl) * ssim(cy, h, cx, w);
  return std::clamp(0.5 * obj + 0.5 * reg, 0.0, 1.0);
}

inline double oracle_e_binary(const Plane& b, const Plane& g) {
  const int n = g.height * g.width;
  double mb = 0, mg = 0;
  for (int i = 0; i < n; ++i) {
    mb += b.data[i];
    mg += g.data[i];
  }
  if (mg == 0) return 1 - mb / n;
  if (mg == n) return mb / n;
  mb /= n;
  mg /= n;
  double s = 0;
  for (int i = 0; i < n; ++i) {
    const double fb = b.data[i] - mb, fgv = g.data[i] - mg;
    const double xi = 2 * fb * fgv / (fb * fb + fgv * fgv + kEps);
    s += (xi + 1) * (xi + 1) / 4;
  }
  return s / n;
}

inline Plane binarize_at(const Plane& p, double t) {
  Plane b(p.height, p.width);
  for (std::size_t i = 0; i < p.size(); ++i) b.data[i] = p.data[i] >= t ? 1.0 : 0.0;
  return b;
}

inline Plane binarize_q(const Plane& p, int t) {
  Plane b(p.height, p.width);
  for (std::size_t i = 0; i < p.size(); ++i) b.data[i] = std::lround(p.data[i] * 255) >= t ? 1.0 : 0.0;
  return b;
}

inline double oracle_e(const Plane& p, const Plane& g, m::EVariant v) {
  if (v == m::EVariant::adaptive) {
    double mean = 0;
    for (double x : p.data) mean += x;
    mean /= p.size();
    return oracle_e_binary(binarize_at(p, std::min(2 * mean, 1.0)), g);
  }
  double sum = 0, best = -1;
  for (int t = 0; t < 256; ++t) {
    const double e = oracle_e_binary(binarize_q(p, t), g);
    sum += e;
    best = std::max(best, e);
  }
  return v == m::EVariant::mean ? sum / 256 : best;
}

inline double oracle_mean_f(const Plane& p, const Plane& g) {
  double ng = 0;
  for (double x : g.data) ng += x;
  double sum = 0;
  for (int t = 0; t < 256; ++t) {
    const Plane b = binarize_q(p, t);
    double tp = 0, pos = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      pos += b.data[i];
      tp += b.data[i] * g.data[i];
    }
    const double prec = pos > 0 ? tp / pos : 0.0;
    const double rec = tp / ng;
    sum += 1.3 * prec * rec / (0.3 * prec + rec + kEps);
  }
  return sum / 256;
}

inline double oracle_weighted_f(const Plane& p, const Plane& g) {
  const int h = g.height, w = g.width;
  // brute-force nearest foreground; first strict minimum in row-major
  // order is the smallest (row, col)
  std::vector<int> nr(h * w), nc(h * w);
  std::vector<double> dist(h * w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      long best = -1;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          if (g(y, x) == 1) {
            const long d = (long)(y - r) * (y - r) + (long)(x - c) * (x - c);
            if (best < 0 || d < best) {
              best = d;
              nr[r * w + c] = y;
              nc[r * w + c] = x;
            }
          }
      dist[r * w + c] = std::sqrt((double)best);
    }
  Plane e(h, w), et(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) e(r, c) = std::abs(p(r, c) - g(r, c));
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) et(r, c) = g(r, c) == 1 ? e(r, c) : e(nr[r * w + c], nc[r * w + c]);
  // 7x7 Gaussian, sigma 5, normalized, zero padding
  double k[7][7], ks = 0;
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) ks += k[i][j] = std::exp(-((i - 3) * (i - 3) + (j - 3) * (j - 3)) / (2.0 * 25));
  double ew_fg = 0, n_fg = 0, fp = 0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double ea = 0;
      for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 7; ++j) {
          const int y = r + i - 3, x = c + j - 3;
          if (y >= 0 && y < h && x >= 0 && x < w) ea += k[i][j] / ks * et(y, x);
        }
      if (g(r, c) == 1) {
        ew_fg += std::min(ea, e(r, c));
        n_fg += 1;
      } else {
        fp += e(r, c) * (2 - std::exp(std::log(0.5) / 5 * dist[r * w + c]));
      }
    }
  const double tp = n_fg - ew_fg;
  const double rec = 1 - ew_fg / n_fg;
  const double prec = tp / (tp + fp + kEps);
  return 1.3 * rec * prec / (rec + 0.3 * prec + kEps);
}

}  // namespace oracle
