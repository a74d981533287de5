#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "speg/config.hpp"
#include "speg/tensor.hpp"

namespace speg {

inline constexpr int kEdgeBandWidth = 5;
inline constexpr std::array<double, 3> kImageNetMean{0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kImageNetStd{0.229, 0.224, 0.225};

// Bilinear resize to size x size, scale to [0,1], ImageNet-normalize.
// Returns [1, 3, size, size].
Tensor preprocess(const ImageU8& image, int size);
// Inverse of the normalization step only (result in [0,1]).
Tensor denormalize(const Tensor& normalized);

Plane resize_plane(const Plane& p, int height, int width);
// 1 where value >= threshold.
Plane threshold_plane(const Plane& p, double threshold);
Plane flip_horizontal(const Plane& p);
ImageU8 flip_horizontal(const ImageU8& image);

// Pixels whose 3x3 neighbourhood mixes foreground and background, with
// everything outside the image treated as background.
Plane morphological_boundary(const Plane& mask);
// Foreground pixels with a background pixel (or the image border) in
// their 3x3 neighbourhood: the one-pixel object contour.
Plane inner_contour(const Plane& mask);
// Contour dilated by a disk of radius (width - 1) / 2.
Plane make_edge_map(const Plane& mask, int width = kEdgeBandWidth);

ImageU8 read_image(const std::filesystem::path& path);
// Foreground = value > 127.
Plane read_mask(const std::filesystem::path& path);
// Grayscale map in [0,1] as 8-bit round(v * 255). Atomic.
void write_gray_png(const std::filesystem::path& path, const Plane& values);
void write_image_png(const std::filesystem::path& path, const ImageU8& image);

struct Sample {
  std::string id;
  ImageU8 image;
  Plane mask;
  Plane edge;
};

enum class Split { train, val, test };

struct LoadOptions {
  double val_fraction = 0.10;
  std::uint64_t seed = 1;
  // Write generated edge maps to root/edges/ for reuse.
  bool cache_edges = true;
};

// Sorted ids present in both images/ and masks/. Throws IoError naming
// every unmatched basename.
std::vector<std::string> paired_ids(const std::filesystem::path& root);
// Train count for n samples.
std::size_t train_count(std::size_t n, double val_fraction);
// Ids of one split: seeded shuffle of the sorted list, first train_count
// to train, remainder to val. `test` is the whole sorted list.
std::vector<std::string> split_ids(const std::vector<std::string>& sorted,
                                   Split split, double val_fraction,
                                   std::uint64_t seed);
std::vector<Sample> load_dataset(const std::filesystem::path& root,
                                 Split split, const LoadOptions& options = {});

// Writes images/, masks/ and edges/ under `root`. Returns image count.
int synthesize(const SynthConfig& cfg, const std::filesystem::path& root);

// SPEG_NUM_WORKERS if set and positive, else the OpenMP default.
int num_workers();

}  // namespace speg
