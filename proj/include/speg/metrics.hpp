#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "speg/tensor.hpp"

namespace speg::metrics {

// All kernels take a prediction in [0,1] and a binary ground truth of the
// same shape; ShapeError otherwise.

double mae(const Plane& pred, const Plane& gt);
double s_measure(const Plane& pred, const Plane& gt, double alpha = 0.5);

enum class EVariant { adaptive, mean, max };
EVariant parse_e_variant(const std::string& name);
std::string to_string(EVariant v);

// Enhanced alignment of a binary map against gt.
double e_measure_binary(const Plane& binary, const Plane& gt);
double e_measure(const Plane& pred, const Plane& gt,
                 EVariant variant = EVariant::adaptive);

struct EMeasures {
  double adaptive = 0;
  double mean = 0;
  double max = 0;
  double get(EVariant v) const;
};
EMeasures e_measures(const Plane& pred, const Plane& gt);

double weighted_f(const Plane& pred, const Plane& gt, double beta_sq = 0.3);
double mean_f(const Plane& pred, const Plane& gt, double beta_sq = 0.3);

// Squared Euclidean distance from every pixel to the nearest foreground
// pixel of `mask`, with the coordinates of that pixel. Among equidistant
// candidates the smallest (row, col) wins. Without foreground all
// distances are +inf and indices -1.
struct NearestForeground {
  std::vector<long long> sq_dist;
  std::vector<int> row;
  std::vector<int> col;
};
NearestForeground nearest_foreground(const Plane& mask);

// round(v * 255) per pixel, clamped to 0..255.
std::vector<int> quantize255(const Plane& pred);

struct ImageMetrics {
  std::string id;
  double s_alpha = 0;
  double e_phi_adp = 0;
  double e_phi_mean = 0;
  double e_phi_max = 0;
  double f_w = 0;
  double f_m = 0;
  double mae = 0;

  double e_phi(EVariant v) const;
};

ImageMetrics evaluate_pair(const std::string& id, const Plane& pred,
                           const Plane& gt);

struct MetricReport {
  std::vector<ImageMetrics> per_image;  // sorted by id
  ImageMetrics aggregate;               // id = "mean"
  std::vector<std::string> skipped;
  EVariant e_variant = EVariant::adaptive;

  std::string to_csv() const;
  std::string to_json() const;
};

// Means in the order of `per_image`.
ImageMetrics aggregate(const std::vector<ImageMetrics>& per_image);

struct EvalOptions {
  EVariant e_variant = EVariant::adaptive;
};

// Pairs predictions and ground truths by basename. A directory holding a
// masks/ subdirectory is read from there. Predictions are resized
// bilinearly to the gt resolution and divided by 255.
MetricReport evaluate_directory(const std::filesystem::path& pred_dir,
                                const std::filesystem::path& gt_dir,
                                const EvalOptions& options = {});

}  // namespace speg::metrics
