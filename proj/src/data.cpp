#include "speg/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <random>
#include <set>

#include <omp.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "speg/errors.hpp"
#include "speg/kernels.hpp"

namespace fs = std::filesystem;

namespace speg {

Tensor preprocess(const ImageU8& image, int size) {
  if (image.channels != 3) {
    throw ShapeError("preprocess: expected 3 channels, got " +
                     std::to_string(image.channels));
  }
  if (size <= 0) throw ConfigError("preprocess: size must be positive");
  const int h = image.height;
  const int w = image.width;
  std::vector<double> planes(static_cast<std::size_t>(3) * h * w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        planes[(static_cast<std::size_t>(c) * h + y) * w + x] = image(y, x, c) / 255.0;
  Tensor out({1, 3, size, size});
  kernels::resize_bilinear_forward(3, h, w, size, size, planes, out.span());
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  for (int c = 0; c < 3; ++c) {
    double* p = out.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - kImageNetMean[c]) / kImageNetStd[c];
  }
  return out;
}

Tensor denormalize(const Tensor& normalized) {
  const Shape s = normalized.shape();
  if (s.c != 3) throw ShapeError("denormalize: expected 3 channels, got " + s.str());
  Tensor out = normalized;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < 3; ++c) {
      double* p = out.data() + out.index(n, c, 0, 0);
      for (std::size_t i = 0; i < s.plane(); ++i) p[i] = p[i] * kImageNetStd[c] + kImageNetMean[c];
    }
  return out;
}

Plane resize_plane(const Plane& p, int height, int width) {
  if (p.height == height && p.width == width) return p;
  Plane out(height, width);
  kernels::resize_bilinear_forward(1, p.height, p.width, height, width, p.data, out.data);
  return out;
}

Plane threshold_plane(const Plane& p, double threshold) {
  Plane out = p;
  for (double& v : out.data) v = v >= threshold ? 1.0 : 0.0;
  return out;
}

Plane flip_horizontal(const Plane& p) {
  Plane out(p.height, p.width);
  for (int y = 0; y < p.height; ++y)
    for (int x = 0; x < p.width; ++x) out(y, x) = p(y, p.width - 1 - x);
  return out;
}

ImageU8 flip_horizontal(const ImageU8& image) {
  ImageU8 out(image.height, image.width, image.channels);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c)
        out(y, x, c) = image(y, image.width - 1 - x, c);
  return out;
}

namespace {

bool fg(const Plane& m, int y, int x) {
  if (y < 0 || x < 0 || y >= m.height || x >= m.width) return false;
  return m(y, x) > 0.5;
}

// Any / all 3x3 neighbours foreground.
std::pair<bool, bool> neighbourhood(const Plane& m, int y, int x) {
  bool any = false;
  bool all = true;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      const bool f = fg(m, y + dy, x + dx);
      any = any || f;
      all = all && f;
    }
  return {any, all};
}

}  // namespace

Plane morphological_boundary(const Plane& mask) {
  Plane out(mask.height, mask.width);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      const auto [any, all] = neighbourhood(mask, y, x);
      out(y, x) = any && !all ? 1.0 : 0.0;
    }
  return out;
}

Plane inner_contour(const Plane& mask) {
  Plane out(mask.height, mask.width);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      out(y, x) = fg(mask, y, x) && !neighbourhood(mask, y, x).second ? 1.0 : 0.0;
    }
  return out;
}

Plane make_edge_map(const Plane& mask, int width) {
  if (width < 1) throw ConfigError("make_edge_map: width must be >= 1");
  const Plane contour = inner_contour(mask);
  const int r = (width - 1) / 2;
  if (r == 0) return contour;
  cv::Mat src(mask.height, mask.width, CV_8U);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) src.at<unsigned char>(y, x) = contour(y, x) > 0.5 ? 255 : 0;
  cv::Mat disk(2 * r + 1, 2 * r + 1, CV_8U);
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      disk.at<unsigned char>(dy + r, dx + r) = dy * dy + dx * dx <= r * r ? 1 : 0;
  cv::Mat dst;
  cv::dilate(src, dst, disk, cv::Point(-1, -1), 1, cv::BORDER_CONSTANT, cv::Scalar(0));
  Plane out(mask.height, mask.width);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) out(y, x) = dst.at<unsigned char>(y, x) ? 1.0 : 0.0;
  return out;
}

ImageU8 read_image(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot read image " + path.string());
  ImageU8 out(bgr.rows, bgr.cols, 3);
  for (int y = 0; y < bgr.rows; ++y)
    for (int x = 0; x < bgr.cols; ++x) {
      const auto& px = bgr.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) out(y, x, c) = px[2 - c];
    }
  return out;
}

Plane read_mask(const fs::path& path) {
  cv::Mat g = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (g.empty()) throw IoError("cannot read mask " + path.string());
  Plane out(g.rows, g.cols);
  for (int y = 0; y < g.rows; ++y)
    for (int x = 0; x < g.cols; ++x) out(y, x) = g.at<unsigned char>(y, x) > 127 ? 1.0 : 0.0;
  return out;
}

namespace {

void write_atomic(const fs::path& path, const cv::Mat& m) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.parent_path() / (".tmp." + path.filename().string());
  if (!cv::imwrite(tmp.string(), m)) throw IoError("cannot write " + path.string());
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename into " + path.string() + ": " + ec.message());
}

}  // namespace

void write_gray_png(const fs::path& path, const Plane& values) {
  cv::Mat m(values.height, values.width, CV_8U);
  for (int y = 0; y < values.height; ++y)
    for (int x = 0; x < values.width; ++x) {
      const double v = std::clamp(values(y, x), 0.0, 1.0);
      m.at<unsigned char>(y, x) = static_cast<unsigned char>(std::lround(v * 255.0));
    }
  write_atomic(path, m);
}

void write_image_png(const fs::path& path, const ImageU8& image) {
  if (image.channels != 3) throw ShapeError("write_image_png: expected 3 channels");
  cv::Mat m(image.height, image.width, CV_8UC3);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c) m.at<cv::Vec3b>(y, x)[2 - c] = image(y, x, c);
  write_atomic(path, m);
}

namespace {

std::map<std::string, fs::path> list_dir(const fs::path& dir,
                                         const std::set<std::string>& exts) {
  std::map<std::string, fs::path> out;
  if (!fs::is_directory(dir)) throw IoError("missing directory " + dir.string());
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (!exts.count(ext)) continue;
    const std::string name = e.path().filename().string();
    if (name.starts_with(".tmp.")) continue;
    out[e.path().stem().string()] = e.path();
  }
  return out;
}

const std::set<std::string> kImageExts{".jpg", ".jpeg", ".png"};
const std::set<std::string> kMaskExts{".png"};

}  // namespace

std::vector<std::string> paired_ids(const fs::path& root) {
  const auto images = list_dir(root / "images", kImageExts);
  const auto masks = list_dir(root / "masks", kMaskExts);
  std::vector<std::string> ids;
  std::string unmatched;
  for (const auto& [id, p] : images) {
    if (masks.count(id)) ids.push_back(id);
    else unmatched += " images/" + p.filename().string();
  }
  for (const auto& [id, p] : masks) {
    if (!images.count(id)) unmatched += " masks/" + p.filename().string();
  }
  if (!unmatched.empty()) throw IoError("unmatched basenames:" + unmatched);
  return ids;
}

std::size_t train_count(std::size_t n, double val_fraction) {
  const double t = std::ceil((1.0 - val_fraction) * static_cast<double>(n) - 1e-9);
  return std::min(n, static_cast<std::size_t>(std::max(0.0, t)));
}

std::vector<std::string> split_ids(const std::vector<std::string>& sorted,
                                   Split split, double val_fraction,
                                   std::uint64_t seed) {
  if (split == Split::test) return sorted;
  std::vector<std::string> order = sorted;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t k = train_count(order.size(), val_fraction);
  if (split == Split::train) return {order.begin(), order.begin() + k};
  return {order.begin() + k, order.end()};
}

std::vector<Sample> load_dataset(const fs::path& root, Split split,
                                 const LoadOptions& options) {
  const auto images = list_dir(root / "images", kImageExts);
  const auto ids = split_ids(paired_ids(root), split, options.val_fraction, options.seed);
  std::vector<Sample> out(ids.size());
  std::vector<std::string> errors(ids.size());
  const fs::path edge_dir = root / "edges";
#pragma omp parallel for schedule(dynamic) num_threads(num_workers())
  for (std::size_t i = 0; i < ids.size(); ++i) {
    try {
      Sample& s = out[i];
      s.id = ids[i];
      s.image = read_image(images.at(ids[i]));
      const fs::path mask_path = root / "masks" / (ids[i] + ".png");
      s.mask = read_mask(mask_path);
      if (s.mask.height != s.image.height || s.mask.width != s.image.width) {
        throw ShapeError("mask/image size mismatch for " + ids[i]);
      }
      const fs::path edge_path = edge_dir / (ids[i] + ".png");
      std::error_code ec;
      const bool fresh = fs::exists(edge_path) &&
                         fs::last_write_time(edge_path, ec) >= fs::last_write_time(mask_path, ec);
      if (fresh) {
        s.edge = read_mask(edge_path);
        if (!s.edge.same_shape(s.mask)) s.edge = make_edge_map(s.mask);
      } else {
        s.edge = make_edge_map(s.mask);
        if (options.cache_edges) write_gray_png(edge_path, s.edge);
      }
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw IoError(e);
  }
  return out;
}

namespace {

double fade(double t) { return t * t * t * (t * (t * 6 - 15) + 10); }

// Two-octave value noise in [0,1].
class ValueNoise {
 public:
  ValueNoise(int size, double cell, std::mt19937_64& rng) {
    for (int o = 0; o < 2; ++o) {
      const double c = std::max(1.0, cell / (1 << o));
      const int n = static_cast<int>(std::ceil(size / c)) + 2;
      Lattice l{c, n, std::vector<double>(static_cast<std::size_t>(n) * n)};
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (double& v : l.values) v = u(rng);
      octaves_.push_back(std::move(l));
    }
  }

  double operator()(double y, double x) const {
    double total = 0.0;
    double amp = 1.0;
    double norm = 0.0;
    for (const auto& l : octaves_) {
      const double fy = y / l.cell;
      const double fx = x / l.cell;
      const int iy = static_cast<int>(fy);
      const int ix = static_cast<int>(fx);
      const double ty = fade(fy - iy);
      const double tx = fade(fx - ix);
      auto at = [&](int r, int c) { return l.values[static_cast<std::size_t>(r) * l.n + c]; };
      const double top = at(iy, ix) * (1 - tx) + at(iy, ix + 1) * tx;
      const double bot = at(iy + 1, ix) * (1 - tx) + at(iy + 1, ix + 1) * tx;
      total += amp * (top * (1 - ty) + bot * ty);
      norm += amp;
      amp *= 0.5;
    }
    return total / norm;
  }

 private:
  struct Lattice {
    double cell;
    int n;
    std::vector<double> values;
  };
  std::vector<Lattice> octaves_;
};

Plane gaussian_blur(const Plane& p, double sigma) {
  const int r = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(2 * r + 1);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= sum;
  Plane tmp(p.height, p.width);
  Plane out(p.height, p.width);
  for (int y = 0; y < p.height; ++y)
    for (int x = 0; x < p.width; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) {
        const int xx = std::clamp(x + i, 0, p.width - 1);
        acc += k[i + r] * p(y, xx);
      }
      tmp(y, x) = acc;
    }
  for (int y = 0; y < p.height; ++y)
    for (int x = 0; x < p.width; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) {
        const int yy = std::clamp(y + i, 0, p.height - 1);
        acc += k[i + r] * tmp(yy, x);
      }
      out(y, x) = acc;
    }
  return out;
}

Plane random_blob(int size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Plane m(size, size);
  const double cy = size * (0.25 + 0.5 * u(rng));
  const double cx = size * (0.25 + 0.5 * u(rng));
  std::uniform_int_distribution<int> parts(1, 3);
  const int k = parts(rng);
  for (int e = 0; e < k; ++e) {
    const double ey = cy + size * 0.1 * (u(rng) - 0.5);
    const double ex = cx + size * 0.1 * (u(rng) - 0.5);
    const double a = size * (0.08 + 0.14 * u(rng));
    const double b = size * (0.08 + 0.14 * u(rng));
    const double th = M_PI * u(rng);
    const double ct = std::cos(th);
    const double st = std::sin(th);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double dy = y + 0.5 - ey;
        const double dx = x + 0.5 - ex;
        const double p = (dy * ct + dx * st) / a;
        const double q = (-dy * st + dx * ct) / b;
        if (p * p + q * q <= 1.0) m(y, x) = 1.0;
      }
  }
  return threshold_plane(gaussian_blur(m, std::max(1.0, size / 64.0)), 0.5);
}

std::string image_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", i);
  return buf;
}

}  // namespace

int synthesize(const SynthConfig& cfg, const fs::path& root) {
  cfg.validate();
  const int n = cfg.image_size;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> count(cfg.objects_min, cfg.objects_max);
  for (int i = 0; i < cfg.num_images; ++i) {
    const ValueNoise background(n, cfg.texture_scale, rng);
    const ValueNoise foreground(n, cfg.texture_scale, rng);
    // Per-image colour cast; factors sum to 3 so grey level is preserved.
    std::array<double, 3> tint;
    const double t0 = 0.15 * (u(rng) - 0.5);
    const double t1 = 0.15 * (u(rng) - 0.5);
    tint = {1.0 + t0, 1.0 + t1, 1.0 - t0 - t1};
    Plane mask(n, n);
    const int objects = count(rng);
    for (int o = 0; o < objects; ++o) {
      const Plane b = random_blob(n, rng);
      for (std::size_t k = 0; k < mask.size(); ++k) mask.data[k] = std::max(mask.data[k], b.data[k]);
    }
    ImageU8 img(n, n, 3);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const bool inside = mask(y, x) > 0.5;
        const double v = inside ? 0.3 + 0.6 * cfg.contrast_delta + 0.15 * foreground(y, x)
                                : 0.3 + 0.15 * background(y, x);
        for (int c = 0; c < 3; ++c) {
          const double px = std::clamp(v * tint[c], 0.0, 1.0);
          img(y, x, c) = static_cast<unsigned char>(std::lround(px * 255.0));
        }
      }
    const std::string id = image_name(i);
    write_image_png(root / "images" / (id + ".png"), img);
    write_gray_png(root / "masks" / (id + ".png"), mask);
    write_gray_png(root / "edges" / (id + ".png"), make_edge_map(mask));
  }
  return cfg.num_images;
}

int num_workers() {
  if (const char* env = std::getenv("SPEG_NUM_WORKERS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return omp_get_max_threads();
}

}  // namespace speg
