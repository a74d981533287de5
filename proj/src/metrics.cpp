#include "speg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>

#include "json.hpp"
#include "speg/data.hpp"
#include "speg/errors.hpp"

namespace fs = std::filesystem;

namespace speg::metrics {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

void check(const Plane& pred, const Plane& gt, const char* what) {
  if (!pred.same_shape(gt)) {
    throw ShapeError(std::string(what) + ": prediction " + std::to_string(pred.height) + "x" +
                     std::to_string(pred.width) + " vs gt " + std::to_string(gt.height) + "x" +
                     std::to_string(gt.width));
  }
  if (pred.size() == 0) throw ShapeError(std::string(what) + ": empty input");
}

bool is_fg(double g) { return g > 0.5; }

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Sample standard deviation; 0 for fewer than two values.
double std_of(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double object_score(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  const double x = mean_of(values);
  const double sigma = std_of(values, x);
  return 2.0 * x / (x * x + 1.0 + sigma + kEps);
}

double s_object(const Plane& pred, const Plane& gt) {
  std::vector<double> fg, bg;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (is_fg(gt.data[i])) fg.push_back(pred.data[i]);
    else bg.push_back(1.0 - pred.data[i]);
  }
  const double u = static_cast<double>(fg.size()) / static_cast<double>(gt.size());
  return u * object_score(fg) + (1.0 - u) * object_score(bg);
}

double ssim(const Plane& pred, const Plane& gt, int r0, int r1, int c0, int c1) {
  const double n = static_cast<double>(r1 - r0) * (c1 - c0);
  if (n <= 0) return 0.0;
  double x = 0, y = 0;
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) {
      x += pred(r, c);
      y += gt(r, c);
    }
  x /= n;
  y /= n;
  double sx = 0, sy = 0, sxy = 0;
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) {
      const double dx = pred(r, c) - x;
      const double dy = gt(r, c) - y;
      sx += dx * dx;
      sy += dy * dy;
      sxy += dx * dy;
    }
  const double den = std::max(n - 1.0, 1.0);
  sx /= den;
  sy /= den;
  sxy /= den;
  const double a = 4.0 * x * y * sxy;
  const double b = (x * x + y * y) * (sx + sy);
  if (a != 0.0) return a / (b + kEps);
  if (b == 0.0) return 1.0;
  return 0.0;
}

double s_region(const Plane& pred, const Plane& gt) {
  const int h = gt.height;
  const int w = gt.width;
  double area = 0, sy = 0, sx = 0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      if (is_fg(gt(r, c))) {
        area += 1;
        sy += r;
        sx += c;
      }
  int cx, cy;
  if (area == 0) {
    cx = static_cast<int>(std::nearbyint(w / 2.0)) + 1;
    cy = static_cast<int>(std::nearbyint(h / 2.0)) + 1;
  } else {
    cx = static_cast<int>(std::nearbyint(sx / area)) + 1;
    cy = static_cast<int>(std::nearbyint(sy / area)) + 1;
  }
  cx = std::min(cx, w);
  cy = std::min(cy, h);
  const double total = static_cast<double>(h) * w;
  const double w1 = static_cast<double>(cx) * cy / total;
  const double w2 = static_cast<double>(w - cx) * cy / total;
  const double w3 = static_cast<double>(cx) * (h - cy) / total;
  const double w4 = 1.0 - w1 - w2 - w3;
  return w1 * ssim(pred, gt, 0, cy, 0, cx) + w2 * ssim(pred, gt, 0, cy, cx, w) +
         w3 * ssim(pred, gt, cy, h, 0, cx) + w4 * ssim(pred, gt, cy, h, cx, w);
}

}  // namespace

double mae(const Plane& pred, const Plane& gt) {
  check(pred, gt, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) s += std::abs(pred.data[i] - gt.data[i]);
  return s / static_cast<double>(gt.size());
}

double s_measure(const Plane& pred, const Plane& gt, double alpha) {
  check(pred, gt, "s_measure");
  double y = 0.0;
  double pm = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    y += is_fg(gt.data[i]) ? 1.0 : 0.0;
    pm += pred.data[i];
  }
  y /= static_cast<double>(gt.size());
  pm /= static_cast<double>(gt.size());
  double s;
  if (y == 0.0) s = 1.0 - pm;
  else if (y == 1.0) s = pm;
  else s = alpha * s_object(pred, gt) + (1.0 - alpha) * s_region(pred, gt);
  return std::clamp(s, 0.0, 1.0);
}

EVariant parse_e_variant(const std::string& name) {
  if (name == "adaptive" || name == "adp") return EVariant::adaptive;
  if (name == "mean") return EVariant::mean;
  if (name == "max") return EVariant::max;
  throw ConfigError("unknown E-measure variant '" + name + "' (adaptive, mean, max)");
}

std::string to_string(EVariant v) {
  switch (v) {
    case EVariant::adaptive: return "adaptive";
    case EVariant::mean: return "mean";
    case EVariant::max: return "max";
  }
  return "adaptive";
}

namespace {

// E-measure from the four (binary, gt) cell counts.
double e_from_counts(double tp, double fp, double fn, double tn) {
  const double n = tp + fp + fn + tn;
  const double nb = tp + fp;
  const double ng = tp + fn;
  if (ng == 0) return (n - nb) / n;
  if (ng == n) return nb / n;
  const double mb = nb / n;
  const double mg = ng / n;
  auto cell = [&](double b, double g) {
    const double pb = b - mb;
    const double pg = g - mg;
    const double xi = 2.0 * pb * pg / (pb * pb + pg * pg + kEps);
    return (xi + 1.0) * (xi + 1.0) / 4.0;
  };
  return (tp * cell(1, 1) + fp * cell(1, 0) + fn * cell(0, 1) + tn * cell(0, 0)) / n;
}

}  // namespace

double e_measure_binary(const Plane& binary, const Plane& gt) {
  check(binary, gt, "e_measure");
  double tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool b = binary.data[i] > 0.5;
    const bool g = is_fg(gt.data[i]);
    if (b && g) tp += 1;
    else if (b) fp += 1;
    else if (g) fn += 1;
    else tn += 1;
  }
  return e_from_counts(tp, fp, fn, tn);
}

std::vector<int> quantize255(const Plane& pred) {
  std::vector<int> q(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    q[i] = static_cast<int>(std::lround(std::clamp(pred.data[i], 0.0, 1.0) * 255.0));
  }
  return q;
}

namespace {

// Per-threshold (tp, fp) counts of [q >= t] for t = 0..255.
void threshold_counts(const std::vector<int>& q, const Plane& gt,
                      std::vector<double>& tp, std::vector<double>& fp) {
  std::vector<double> hist_fg(256, 0.0), hist_bg(256, 0.0);
  for (std::size_t i = 0; i < q.size(); ++i) {
    (is_fg(gt.data[i]) ? hist_fg : hist_bg)[q[i]] += 1;
  }
  tp.assign(256, 0.0);
  fp.assign(256, 0.0);
  double a = 0, b = 0;
  for (int t = 255; t >= 0; --t) {
    a += hist_fg[t];
    b += hist_bg[t];
    tp[t] = a;
    fp[t] = b;
  }
}

}  // namespace

EMeasures e_measures(const Plane& pred, const Plane& gt) {
  check(pred, gt, "e_measure");
  EMeasures out;
  double mean = 0.0;
  for (double v : pred.data) mean += v;
  mean /= static_cast<double>(pred.size());
  const double thr = std::min(2.0 * mean, 1.0);
  Plane b(pred.height, pred.width);
  for (std::size_t i = 0; i < pred.size(); ++i) b.data[i] = pred.data[i] >= thr ? 1.0 : 0.0;
  out.adaptive = e_measure_binary(b, gt);

  std::vector<double> tp, fp;
  threshold_counts(quantize255(pred), gt, tp, fp);
  double ng = 0;
  for (double g : gt.data) ng += is_fg(g) ? 1 : 0;
  const double n = static_cast<double>(gt.size());
  double sum = 0.0;
  double best = -1.0;
  for (int t = 0; t < 256; ++t) {
    const double e = e_from_counts(tp[t], fp[t], ng - tp[t], n - ng - fp[t]);
    sum += e;
    best = std::max(best, e);
  }
  out.mean = sum / 256.0;
  out.max = best;
  return out;
}

double EMeasures::get(EVariant v) const {
  switch (v) {
    case EVariant::adaptive: return adaptive;
    case EVariant::mean: return mean;
    case EVariant::max: return max;
  }
  return adaptive;
}

double e_measure(const Plane& pred, const Plane& gt, EVariant variant) {
  return e_measures(pred, gt).get(variant);
}

NearestForeground nearest_foreground(const Plane& mask) {
  const int h = mask.height;
  const int w = mask.width;
  const std::size_t n = static_cast<std::size_t>(h) * w;
  NearestForeground out;
  out.sq_dist.assign(n, std::numeric_limits<long long>::max());
  out.row.assign(n, -1);
  out.col.assign(n, -1);
  bool any = false;
  for (double v : mask.data) any = any || is_fg(v);
  if (!any) return out;

  // Exact squared distance: column pass then row pass of the lower
  // envelope of parabolas.
  const double inf = 1e30;
  std::vector<double> g(n);
  for (int c = 0; c < w; ++c) {
    double last = -1;
    for (int r = 0; r < h; ++r) {
      if (is_fg(mask(r, c))) last = r;
      g[static_cast<std::size_t>(r) * w + c] = last < 0 ? inf : (r - last) * (r - last);
    }
    last = -1;
    for (int r = h - 1; r >= 0; --r) {
      if (is_fg(mask(r, c))) last = r;
      if (last >= 0) {
        double& v = g[static_cast<std::size_t>(r) * w + c];
        v = std::min(v, (last - r) * (last - r));
      }
    }
  }
  std::vector<double> f(w), z(w + 1);
  std::vector<int> v(w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) f[c] = g[static_cast<std::size_t>(r) * w + c];
    int k = 0;
    int first = 0;
    while (first < w && f[first] >= inf) ++first;
    v[0] = first;
    z[0] = -inf;
    z[1] = inf;
    for (int q = first + 1; q < w; ++q) {
      if (f[q] >= inf) continue;
      double s;
      while (true) {
        const int p = v[k];
        s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
        if (s <= z[k] && k > 0) --k;
        else break;
      }
      ++k;
      v[k] = q;
      z[k] = s;
      z[k + 1] = inf;
    }
    k = 0;
    for (int c = 0; c < w; ++c) {
      while (z[k + 1] < c) ++k;
      const double d = double(c - v[k]) * (c - v[k]) + f[v[k]];
      out.sq_dist[static_cast<std::size_t>(r) * w + c] = std::llround(d);
    }
  }

  // Smallest (row, col) at exactly that distance.
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      const long long d2 = out.sq_dist[i];
      if (d2 == 0) {
        out.row[i] = r;
        out.col[i] = c;
        continue;
      }
      const int d = static_cast<int>(std::sqrt(static_cast<double>(d2)));
      bool found = false;
      for (int rr = std::max(0, r - d - 1); rr <= std::min(h - 1, r + d + 1) && !found; ++rr) {
        const long long dy2 = static_cast<long long>(rr - r) * (rr - r);
        const long long rem = d2 - dy2;
        if (rem < 0) continue;
        long long dx = static_cast<long long>(std::llround(std::sqrt(static_cast<double>(rem))));
        if (dx * dx != rem) continue;
        for (long long cc : {c - dx, c + dx}) {
          if (cc >= 0 && cc < w && is_fg(mask(rr, static_cast<int>(cc)))) {
            out.row[i] = rr;
            out.col[i] = static_cast<int>(cc);
            found = true;
            break;
          }
        }
      }
    }
  return out;
}

double weighted_f(const Plane& pred, const Plane& gt, double beta_sq) {
  check(pred, gt, "weighted_f");
  const int h = gt.height;
  const int w = gt.width;
  bool any_gt = false;
  bool any_pred = false;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    any_gt = any_gt || is_fg(gt.data[i]);
    any_pred = any_pred || pred.data[i] != 0.0;
  }
  if (!any_gt) return any_pred ? 0.0 : 1.0;

  const NearestForeground nf = nearest_foreground(gt);
  Plane e(h, w), et(h, w);
  for (std::size_t i = 0; i < gt.size(); ++i) e.data[i] = std::abs(pred.data[i] - gt.data[i]);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      et.data[i] = is_fg(gt.data[i]) ? e.data[i] : e(nf.row[i], nf.col[i]);
    }

  double kernel[7][7];
  double ksum = 0.0;
  for (int dy = -3; dy <= 3; ++dy)
    for (int dx = -3; dx <= 3; ++dx) ksum += kernel[dy + 3][dx + 3] = std::exp(-(dy * dy + dx * dx) / 50.0);
  for (auto& row : kernel)
    for (double& k : row) k /= ksum;

  double tp = 0.0;
  double fp = 0.0;
  double ew_fg = 0.0;
  double n_fg = 0.0;
  const double decay = std::log(0.5) / 5.0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double ea = 0.0;
      for (int dy = -3; dy <= 3; ++dy) {
        const int rr = r + dy;
        if (rr < 0 || rr >= h) continue;
        for (int dx = -3; dx <= 3; ++dx) {
          const int cc = c + dx;
          if (cc < 0 || cc >= w) continue;
          ea += kernel[dy + 3][dx + 3] * et(rr, cc);
        }
      }
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      if (is_fg(gt.data[i])) {
        const double m = ea < e.data[i] ? ea : e.data[i];
        ew_fg += m;
        n_fg += 1;
      } else {
        const double dist = std::sqrt(static_cast<double>(nf.sq_dist[i]));
        fp += e.data[i] * (2.0 - std::exp(decay * dist));
      }
    }
  tp = n_fg - ew_fg;
  const double recall = 1.0 - ew_fg / n_fg;
  const double precision = tp / (tp + fp + kEps);
  return (1.0 + beta_sq) * recall * precision / (recall + beta_sq * precision + kEps);
}

double mean_f(const Plane& pred, const Plane& gt, double beta_sq) {
  check(pred, gt, "mean_f");
  double ng = 0;
  bool any_pred = false;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    ng += is_fg(gt.data[i]) ? 1 : 0;
    any_pred = any_pred || pred.data[i] != 0.0;
  }
  if (ng == 0) return any_pred ? 0.0 : 1.0;
  std::vector<double> tp, fp;
  threshold_counts(quantize255(pred), gt, tp, fp);
  double sum = 0.0;
  for (int t = 0; t < 256; ++t) {
    const double p = tp[t] + fp[t] > 0 ? tp[t] / (tp[t] + fp[t]) : 0.0;
    const double r = tp[t] / ng;
    sum += (1.0 + beta_sq) * p * r / (beta_sq * p + r + kEps);
  }
  return sum / 256.0;
}

double ImageMetrics::e_phi(EVariant v) const {
  switch (v) {
    case EVariant::adaptive: return e_phi_adp;
    case EVariant::mean: return e_phi_mean;
    case EVariant::max: return e_phi_max;
  }
  return e_phi_adp;
}

ImageMetrics evaluate_pair(const std::string& id, const Plane& pred, const Plane& gt) {
  ImageMetrics m;
  m.id = id;
  m.s_alpha = s_measure(pred, gt);
  const EMeasures e = e_measures(pred, gt);
  m.e_phi_adp = e.adaptive;
  m.e_phi_mean = e.mean;
  m.e_phi_max = e.max;
  m.f_w = weighted_f(pred, gt);
  m.f_m = mean_f(pred, gt);
  m.mae = mae(pred, gt);
  return m;
}

ImageMetrics aggregate(const std::vector<ImageMetrics>& per_image) {
  ImageMetrics a;
  a.id = "mean";
  if (per_image.empty()) return a;
  for (const auto& m : per_image) {
    a.s_alpha += m.s_alpha;
    a.e_phi_adp += m.e_phi_adp;
    a.e_phi_mean += m.e_phi_mean;
    a.e_phi_max += m.e_phi_max;
    a.f_w += m.f_w;
    a.f_m += m.f_m;
    a.mae += m.mae;
  }
  const double n = static_cast<double>(per_image.size());
  a.s_alpha /= n;
  a.e_phi_adp /= n;
  a.e_phi_mean /= n;
  a.e_phi_max /= n;
  a.f_w /= n;
  a.f_m /= n;
  a.mae /= n;
  return a;
}

namespace {

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

nlohmann::ordered_json metrics_json(const ImageMetrics& m, EVariant v) {
  nlohmann::ordered_json j;
  j["id"] = m.id;
  j["s_alpha"] = m.s_alpha;
  j["e_phi"] = m.e_phi(v);
  j["e_phi_adp"] = m.e_phi_adp;
  j["e_phi_mean"] = m.e_phi_mean;
  j["e_phi_max"] = m.e_phi_max;
  j["f_w"] = m.f_w;
  j["f_m"] = m.f_m;
  j["mae"] = m.mae;
  return j;
}

}  // namespace

std::string MetricReport::to_csv() const {
  std::string out = "id,s_alpha,e_phi_adp,e_phi_mean,e_phi_max,f_w,f_m,mae\n";
  auto row = [&](const ImageMetrics& m) {
    out += m.id + "," + num(m.s_alpha) + "," + num(m.e_phi_adp) + "," + num(m.e_phi_mean) + "," +
           num(m.e_phi_max) + "," + num(m.f_w) + "," + num(m.f_m) + "," + num(m.mae) + "\n";
  };
  for (const auto& m : per_image) row(m);
  return out;
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["e_variant"] = to_string(e_variant);
  j["per_image"] = nlohmann::ordered_json::array();
  for (const auto& m : per_image) j["per_image"].push_back(metrics_json(m, e_variant));
  auto agg = metrics_json(aggregate, e_variant);
  agg.erase("id");
  j["aggregate"] = agg;
  j["counts"] = {{"evaluated", per_image.size()}, {"skipped", skipped.size()}};
  j["skipped"] = skipped;
  return j.dump(2) + "\n";
}

namespace {

std::map<std::string, fs::path> list_maps(fs::path dir) {
  if (fs::is_directory(dir / "masks")) dir /= "masks";
  if (!fs::is_directory(dir)) throw IoError("missing directory " + dir.string());
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext != ".png" && ext != ".jpg" && ext != ".jpeg" && ext != ".bmp") continue;
    if (e.path().filename().string().starts_with(".tmp.")) continue;
    out[e.path().stem().string()] = e.path();
  }
  return out;
}

Plane read_prediction(const fs::path& path, int height, int width) {
  cv::Mat g = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (g.empty()) throw IoError("cannot read prediction " + path.string());
  Plane p(g.rows, g.cols);
  for (int y = 0; y < g.rows; ++y)
    for (int x = 0; x < g.cols; ++x) p(y, x) = g.at<unsigned char>(y, x);
  p = resize_plane(p, height, width);
  for (double& v : p.data) v = std::clamp(v / 255.0, 0.0, 1.0);
  return p;
}

}  // namespace

MetricReport evaluate_directory(const fs::path& pred_dir, const fs::path& gt_dir,
                                const EvalOptions& options) {
  const auto preds = list_maps(pred_dir);
  const auto gts = list_maps(gt_dir);
  std::vector<std::string> ids;
  std::string unmatched;
  for (const auto& [id, p] : gts) {
    if (preds.count(id)) ids.push_back(id);
    else unmatched += " gt/" + p.filename().string();
  }
  for (const auto& [id, p] : preds) {
    if (!gts.count(id)) unmatched += " pred/" + p.filename().string();
  }
  if (!unmatched.empty() || ids.empty()) {
    throw IoError(ids.empty() && unmatched.empty() ? "no images to evaluate"
                                                   : "unmatched basenames:" + unmatched);
  }
  std::vector<ImageMetrics> results(ids.size());
  std::vector<char> ok(ids.size(), 0);
#pragma omp parallel for schedule(dynamic) num_threads(num_workers())
  for (std::size_t i = 0; i < ids.size(); ++i) {
    try {
      const Plane gt = read_mask(gts.at(ids[i]));
      const Plane pred = read_prediction(preds.at(ids[i]), gt.height, gt.width);
      results[i] = evaluate_pair(ids[i], pred, gt);
      ok[i] = 1;
    } catch (const IoError&) {
    }
  }
  MetricReport report;
  report.e_variant = options.e_variant;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ok[i]) report.per_image.push_back(results[i]);
    else report.skipped.push_back(ids[i]);
  }
  report.aggregate = aggregate(report.per_image);
  return report;
}

}  // namespace speg::metrics
