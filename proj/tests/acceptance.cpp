// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance            run every criterion
//   acceptance 3 7        run a subset

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "metric_oracles.hpp"
#include "speg/context.hpp"
#include "speg/data.hpp"
#include "speg/decoder.hpp"
#include "speg/metrics.hpp"
#include "speg/model.hpp"
#include "speg/objectives.hpp"
#include "speg/train.hpp"
#include "test_util.hpp"

using namespace speg;
namespace fs = std::filesystem;
namespace m = speg::metrics;
using testutil::random_tensor;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

fs::path scratch_root() {
  static const fs::path root = [] {
    const auto stamp = Clock::now().time_since_epoch().count();
    fs::path p = fs::temp_directory_path() / ("speg_acceptance_" + std::to_string(stamp));
    fs::create_directories(p);
    return p;
  }();
  return root;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

bool same_tree(const fs::path& a, const fs::path& b, const std::string& skip = "manifest.json") {
  std::set<std::string> na, nb;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file() && e.path().filename() != skip) na.insert(fs::relative(e.path(), a).string());
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file() && e.path().filename() != skip) nb.insert(fs::relative(e.path(), b).string());
  if (na != nb || na.empty()) return false;
  for (const auto& n : na)
    if (slurp(a / n) != slurp(b / n)) return false;
  return true;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + SPEG_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

NetworkConfig desk_network() {
  NetworkConfig net;
  apply_kv(preset("desk"), net);
  return net;
}

TrainConfig desk_train() {
  TrainConfig tc;
  apply_kv(preset("desk"), tc);
  return tc;
}

Plane random_pred(int n, std::mt19937_64& g) {
  std::uniform_real_distribution<double> u(0, 1);
  Plane p(n, n);
  for (auto& v : p.data) v = u(g);
  return p;
}

Plane random_gt(int n, std::mt19937_64& g) {
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::bernoulli_distribution b(u(g));
  Plane p(n, n);
  for (auto& v : p.data) v = b(g) ? 1.0 : 0.0;
  return p;
}

// ------------------------------------------------------------------ 1

void shape_law(Outcome& o) {
  int checked = 0;
  NoGradGuard no_grad;
  for (double scale : {1.0, 4.0, 8.0})
    for (int size : {64, 128, 256, 512}) {
      NetworkConfig cfg;
      cfg.channel_scale = scale;
      cfg.input_size = size;
      SpegNet net(cfg, 1);
      std::mt19937_64 g(size);
      const auto fo = net.forward(random_tensor({1, 3, size, size}, g), false);
      const auto c = cfg.stage_channels();
      const std::string tag = " @" + std::to_string(size) + "/s" + std::to_string(int(scale));
      for (int s = 0; s < 4; ++s) {
        const int stride = 4 << s;
        o.require(fo.features.stages[s].shape() == Shape{1, c[s], size / stride, size / stride},
                  "encoder X" + std::to_string(s + 1) + tag);
      }
      o.require(fo.context.shape() == Shape{1, cfg.context_width(), size / 8, size / 8}, "context" + tag);
      o.require(fo.edge.features.shape() == Shape{1, cfg.edge_width(), size / 8, size / 8}, "F_edge" + tag);
      o.require(fo.edge.logits.shape() == Shape{1, 1, size / 8, size / 8}, "E" + tag);
      o.require(fo.decode.p1.shape() == Shape{1, 1, size / 4, size / 4}, "P1" + tag);
      o.require(fo.decode.p2.shape() == Shape{1, 1, size / 2, size / 2}, "P2" + tag);
      o.require(fo.decode.p3.shape() == Shape{1, 1, size, size}, "P3" + tag);
      ++checked;
    }
  o.detail << checked << " size/scale combinations";
}

// ------------------------------------------------------------------ 2

void loss_linearity(Outcome& o) {
  const std::vector<Var> seg{Var(Tensor::scalar(1)), Var(Tensor::scalar(1)), Var(Tensor::scalar(1))};
  const auto b = combine_losses(seg, Var(Tensor::scalar(1)), LossWeights{});
  o.require(b.total == 1.75, "unit components total 1.75");
  o.detail << "unit total " << b.total;

  std::mt19937_64 g(2);
  DecodeOutputs out;
  out.p1 = Var(random_tensor({2, 1, 4, 4}, g, -3, 3));
  out.p2 = Var(random_tensor({2, 1, 8, 8}, g, -3, 3));
  out.p3 = Var(random_tensor({2, 1, 16, 16}, g, -3, 3));
  EdgeOutputs edge{Var(), Var(random_tensor({2, 1, 2, 2}, g, -3, 3))};
  Tensor mask({2, 1, 16, 16});
  for (int n = 0; n < 2; ++n)
    for (int r = 4; r < 12; ++r)
      for (int c = 3 + n; c < 11; ++c) mask.at(n, 0, r, c) = 1;
  const Tensor band = scaled_edge_band(mask, 16);
  LossWeights lw;
  lw.lambda_e = 0;
  const double before = total_loss(out, edge, mask, band, lw).total;
  bool invariant = true;
  for (int t = 0; t < 10; ++t) {
    edge.logits = Var(random_tensor({2, 1, 2, 2}, g, -10, 10));
    invariant = invariant && total_loss(out, edge, mask, band, lw).total == before;
  }
  o.require(invariant, "lambda_e = 0 invariance");
  o.detail << ", lambda_e=0 invariant under 10 edge perturbations";
}

// ------------------------------------------------------------------ 3

void gradient_checks(Outcome& o) {
  const auto t0 = Clock::now();
  std::mt19937_64 g(3);
  LossWeights lw;
  std::map<std::string, double> worst;

  Var z = testutil::param(random_tensor({2, 1, 4, 4}, g, -2, 2));
  Tensor gt({2, 1, 4, 4});
  std::bernoulli_distribution b(0.5);
  for (auto& v : gt.values()) v = b(g);
  const Tensor band = scaled_edge_band(gt, 4);
  const Tensor w = boundary_weight_map(gt, band, lw.lambda_b);
  worst["structure_loss"] = testutil::gradcheck([&] { return structure_loss(z, gt, w, lw); }, {z});
  worst["edge_loss"] = testutil::gradcheck([&] { return edge_loss(z, band, lw); }, {z});

  nn::ParameterStore store;
  nn::Rng rng(3);
  nn::LayerContext ctx{store, rng, nn::ParamGroup::head};
  nn::Conv2d proj(ctx, "proj", 3, 4, 1, {});
  Var u = testutil::param(random_tensor({1, 4, 4, 4}, g));
  EdgeOutputs e{testutil::param(random_tensor({1, 3, 2, 2}, g)), testutil::param(random_tensor({1, 1, 2, 2}, g))};
  Var prior = testutil::param(random_tensor({1, 1, 2, 2}, g));
  worst["fuse_stage"] = testutil::gradcheck(
      [&] { return testutil::project(fuse_stage(u, e, prior, 0.33, proj)); },
      {u, e.features, e.logits, prior, proj.weight, proj.bias});

  ChannelRecalibration se(ctx, "se", 8, 4);
  Var x = testutil::param(random_tensor({1, 8, 4, 4}, g));
  worst["channel_recalibrate"] = testutil::gradcheck(
      [&] { return testutil::project(se(x)); }, {x, se.squeeze.weight, se.squeeze.bias, se.excite.weight});

  EfficientAspp aspp(ctx, "aspp", 8, 6, {1, 2});
  testutil::randomize_norms(store, g);
  worst["easpp"] = testutil::gradcheck([&] { return testutil::project(aspp(x, false)); },
                                       {x, aspp.reduce.conv.weight, aspp.branches[0].weight,
                                        aspp.pool_proj.weight, aspp.fuse.conv.weight});
  for (const auto& [name, err] : worst) {
    const double tol = name.find("loss") != std::string::npos ? 1e-6 : 1e-3;
    o.require(err < tol, name);
    o.detail << name << "=" << err << " ";
  }
  const double secs = seconds_since(t0);
  o.require(secs < 120, "runtime < 2 min");
  o.detail << "(" << secs << " s)";
}

// ------------------------------------------------------------------ 4

void edge_schedule(Outcome& o) {
  NetworkConfig cfg = desk_network();
  nn::ParameterStore store;
  nn::Rng rng(4);
  ProgressiveDecoder ped(cfg, store, rng);
  o.require(ped.alphas() == std::array<double, 3>{0.20, 0.33, 0.00}, "default influence");
  std::mt19937_64 g(4);
  const auto widths = cfg.decoder_widths();
  const int ew = cfg.edge_width();
  auto random_edge = [&] {
    return EdgeOutputs{Var(random_tensor({1, ew, 16, 16}, g)), Var(random_tensor({1, 1, 16, 16}, g, -3, 3))};
  };
  const EdgeOutputs e1 = random_edge(), e2 = random_edge();

  Var ctx(random_tensor({1, cfg.context_width(), 16, 16}, g));
  Var f1(random_tensor({1, widths[0], 32, 32}, g));
  Var f2(random_tensor({1, widths[1], 64, 64}, g));
  Var pr1(random_tensor({1, 1, 32, 32}, g)), pr2(random_tensor({1, 1, 64, 64}, g));
  const auto& st = ped.stages();
  const auto s1a = st[0].forward(ctx, 32, 32, e1, Var(), ped.alphas()[0], false);
  const auto s1b = st[0].forward(ctx, 32, 32, e2, Var(), ped.alphas()[0], false);
  const auto s2a = st[1].forward(f1, 64, 64, e1, pr1, ped.alphas()[1], false);
  const auto s2b = st[1].forward(f1, 64, 64, e2, pr1, ped.alphas()[1], false);
  const auto s3a = st[2].forward(f2, 128, 128, e1, pr2, ped.alphas()[2], false);
  const auto s3b = st[2].forward(f2, 128, 128, e2, pr2, ped.alphas()[2], false);
  o.require(testutil::bitwise_equal(s3a.features.value(), s3b.features.value()) &&
                testutil::bitwise_equal(s3a.logits.value(), s3b.logits.value()),
            "stage 3 bitwise unchanged");
  o.require(!testutil::bitwise_equal(s1a.logits.value(), s1b.logits.value()), "stage 1 changes");
  o.require(!testutil::bitwise_equal(s2a.logits.value(), s2b.logits.value()), "stage 2 changes");

  NetworkConfig ablated = desk_network();
  apply_kv(ablation("no-edge"), ablated);
  NetworkConfig zero = desk_network();
  zero.edge_influence = {0, 0, 0};
  SpegNet a(ablated, 9), b(zero, 9);
  const Tensor img = random_tensor({2, 3, 128, 128}, g, -2, 2);
  const auto oa = a.forward(img, false), ob = b.forward(img, false);
  o.require(testutil::bitwise_equal(oa.decode.p1.value(), ob.decode.p1.value()) &&
                testutil::bitwise_equal(oa.decode.p2.value(), ob.decode.p2.value()) &&
                testutil::bitwise_equal(oa.decode.p3.value(), ob.decode.p3.value()),
            "no-edge equals influence [0,0,0]");
  o.detail << "stage 3 invariant, stages 1-2 respond, no-edge == [0,0,0]";
}

// ------------------------------------------------------------------ 5

void metric_endpoints(Outcome& o) {
  std::mt19937_64 g(5);
  double worst = 0;
  for (int t = 0; t < 50; ++t) {
    Plane gt = random_gt(16, g);
    gt.data[0] = 1;
    gt.data[1] = 0;
    worst = std::max({worst, std::abs(m::s_measure(gt, gt) - 1), std::abs(m::e_measure(gt, gt) - 1),
                      std::abs(m::weighted_f(gt, gt) - 1)});
    o.require(m::mae(gt, gt) == 0.0, "MAE 0 on pred = gt");
  }
  o.require(worst < 1e-6, "S, E, Fw = 1 on pred = gt");
  Plane two(2, 2);
  two.data = {1, 0, 1, 0};
  const double fm = m::mean_f(two, two);
  o.require(std::abs(fm - (0.65 / 1.15 + 255) / 256) < 1e-6 && std::abs(fm - 0.9983) < 1e-4, "mean_f 2x2");
  Plane gt(4, 4), inv(4, 4);
  for (int i = 0; i < 16; ++i) {
    gt.data[i] = (i * 7) % 16 < 8;
    inv.data[i] = 1 - gt.data[i];
  }
  const double e_inv = m::e_measure(inv, gt);
  o.require(std::abs(e_inv) < 1e-6, "E = 0 on inverted");
  o.require(m::mae(inv, gt) == 1.0, "MAE 1 on inverted");
  o.detail << "max |metric - 1| = " << worst << ", mean_f(2x2) = " << fm << ", E(inverted) = " << e_inv;
}

// ------------------------------------------------------------------ 6

void metric_oracles(Outcome& o) {
  const auto t0 = Clock::now();
  std::mt19937_64 g(6);
  double d_mae = 0, d_fm = 0, d_s = 0, d_e = 0, d_fw = 0;
  for (int t = 0; t < 200; ++t) {
    const Plane gt = random_gt(16, g);
    Plane pred = random_pred(16, g);
    if (t % 2 == 0)
      for (std::size_t i = 0; i < pred.size(); ++i) pred.data[i] = 0.6 * gt.data[i] + 0.4 * pred.data[i];
    d_mae = std::max(d_mae, std::abs(m::mae(pred, gt) - oracle::oracle_mae(pred, gt)));
    d_fm = std::max(d_fm, std::abs(m::mean_f(pred, gt) - oracle::oracle_mean_f(pred, gt)));
    d_s = std::max(d_s, std::abs(m::s_measure(pred, gt) - oracle::oracle_s(pred, gt)));
    const auto e = m::e_measures(pred, gt);
    d_e = std::max({d_e, std::abs(e.adaptive - oracle::oracle_e(pred, gt, m::EVariant::adaptive)),
                    std::abs(e.mean - oracle::oracle_e(pred, gt, m::EVariant::mean)),
                    std::abs(e.max - oracle::oracle_e(pred, gt, m::EVariant::max))});
    d_fw = std::max(d_fw, std::abs(m::weighted_f(pred, gt) - oracle::oracle_weighted_f(pred, gt)));
  }
  o.require(d_mae < 1e-9, "mae");
  o.require(d_fm < 1e-9, "mean_f");
  o.require(d_s < 1e-6, "s_measure");
  o.require(d_e < 1e-6, "e_measure");
  o.require(d_fw < 1e-6, "weighted_f");
  const double secs = seconds_since(t0);
  o.require(secs < 120, "runtime < 2 min");
  o.detail << "max diffs mae " << d_mae << " mean_f " << d_fm << " S " << d_s << " E " << d_e << " Fw "
           << d_fw << " (" << secs << " s)";
}

// ------------------------------------------------------------------ 7

void edge_band(Outcome& o) {
  const fs::path root = scratch_root() / "c7";
  SynthConfig sc;
  sc.image_size = 64;
  sc.num_images = 50;
  sc.objects_min = 1;
  sc.objects_max = 3;
  sc.seed = 77;
  synthesize(sc, root);
  int masks = 0;
  long missing = 0, far = 0;
  for (const auto& s : load_dataset(root, Split::test)) {
    ++masks;
    const Plane boundary = morphological_boundary(s.mask);
    const int h = s.mask.height, w = s.mask.width;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        if (boundary(r, c) > 0.5 && s.edge(r, c) < 0.5) ++missing;
        if (s.edge(r, c) > 0.5) {
          int best = 1 << 30;
          for (int y = std::max(0, r - 3); y <= std::min(h - 1, r + 3); ++y)
            for (int x = std::max(0, c - 3); x <= std::min(w - 1, c + 3); ++x)
              if (boundary(y, x) > 0.5) best = std::min(best, (y - r) * (y - r) + (x - c) * (x - c));
          if (best > 4) ++far;
        }
      }
  }
  o.require(masks == 50, "50 masks");
  o.require(missing == 0, "boundary contained in band");
  o.require(far == 0, "band within 2 px of boundary");
  o.detail << masks << " masks, " << missing << " boundary pixels outside band, " << far
           << " band pixels farther than 2 px";
}

// ------------------------------------------------------------------ 8

void overfit(Outcome& o) {
  const auto t0 = Clock::now();
  const fs::path root = scratch_root() / "c8";
  SynthConfig sc;
  sc.image_size = 128;
  sc.num_images = 8;
  sc.contrast_delta = 0.3;
  synthesize(sc, root);
  const auto samples = load_dataset(root, Split::test);
  NetworkConfig net = desk_network();
  TrainConfig tc = desk_train();
  tc.seed = 1;
  tc.max_steps = 500;
  tc.epochs = 1000;
  SpegNet model(net, tc.seed);
  std::vector<double> losses;
  int first_pass = -1;
  double mae = 1, s = 0;
  TrainOptions opt;
  opt.on_step = [&](const LogRow& row) {
    losses.push_back(row.total);
    if (row.step % 100 == 0) {
      const auto v = validate(model, samples, LossWeights{}, 4);
      mae = v.report.aggregate.mae;
      s = v.report.aggregate.s_alpha;
      std::printf("  criterion 8: step %lld loss %.4f train MAE %.4f S %.4f\n", (long long)row.step, row.total,
                  mae, s);
      std::fflush(stdout);
      if (first_pass < 0 && mae < 0.05 && s > 0.90) first_pass = static_cast<int>(row.step);
    }
  };
  train(model, LossWeights{}, tc, samples, {}, opt);
  // 20-step moving average sampled every 100 steps
  std::vector<double> smooth;
  for (std::size_t end = 100; end <= losses.size(); end += 100) {
    double acc = 0;
    for (std::size_t i = end - 20; i < end; ++i) acc += losses[i];
    smooth.push_back(acc / 20);
  }
  bool decreasing = smooth.size() == 5;
  for (std::size_t i = 1; i < smooth.size(); ++i) decreasing = decreasing && smooth[i] < smooth[i - 1];
  const double secs = seconds_since(t0);
  o.require(first_pass > 0, "MAE < 0.05 and S > 0.90 within 500 steps");
  o.require(secs < 900, "wall clock < 15 min");
  o.require(decreasing, "smoothed loss decreasing");
  o.detail << "first passing check at step " << first_pass << ", final MAE " << mae << " S " << s
           << ", smoothed loss";
  for (double v : smooth) o.detail << " " << v;
  o.detail << " (" << secs << " s)";
}

// ------------------------------------------------------------------ 9

void determinism(Outcome& o) {
  const fs::path root = scratch_root() / "c9";
  const std::string synth = "synth --n 8 --size 128 --seed 7 --out ";
  o.require(run_cli(synth + "\"" + (root / "data_a").string() + "\"") == 0, "synth run a");
  o.require(run_cli(synth + "\"" + (root / "data_b").string() + "\"") == 0, "synth run b");
  o.require(same_tree(root / "data_a", root / "data_b"), "synth bitwise identical");

  const std::string train = "train --preset desk --seed 1 --epochs 5 --data \"" + (root / "data_a").string() +
                            "\" --out ";
  o.require(run_cli(train + "\"" + (root / "run_a").string() + "\"") == 0, "train run a");
  o.require(run_cli(train + "\"" + (root / "run_b").string() + "\"") == 0, "train run b");
  auto first_rows = [](const fs::path& log) {
    std::ifstream in(log);
    std::vector<std::string> rows;
    std::string line;
    std::getline(in, line);
    while (rows.size() < 10 && std::getline(in, line)) rows.push_back(line);
    return rows;
  };
  const auto ra = first_rows(root / "run_a" / "train_log.csv");
  const auto rb = first_rows(root / "run_b" / "train_log.csv");
  o.require(ra.size() == 10 && ra == rb, "first 10 loss rows identical");

  const std::string infer = "infer --checkpoint \"" + (root / "run_a" / "last.ckpt").string() + "\" --data \"" +
                            (root / "data_a").string() + "\" --out ";
  o.require(run_cli(infer + "\"" + (root / "infer_a").string() + "\"") == 0, "infer run a");
  o.require(run_cli(infer + "\"" + (root / "infer_b").string() + "\"") == 0, "infer run b");
  o.require(same_tree(root / "infer_a", root / "infer_b"), "infer bitwise identical");
  o.detail << "synth trees, " << ra.size() << " logged steps and infer trees compared";
}

// ------------------------------------------------------------------ 10

constexpr int kAblationImages = 64;
constexpr int kAblationSteps = 600;
constexpr double kAblationValFraction = 0.25;

void ablation_order(Outcome& o) {
  const auto t0 = Clock::now();
  const fs::path root = scratch_root() / "c10";
  SynthConfig sc;
  sc.image_size = 128;
  sc.num_images = kAblationImages;
  synthesize(sc, root);
  LoadOptions lo;
  lo.val_fraction = kAblationValFraction;
  lo.seed = 1;
  const auto train_set = load_dataset(root, Split::train, lo);
  const auto val_set = load_dataset(root, Split::val, lo);
  std::map<std::string, double> score;
  for (const std::string name : {"full", "no-ca", "no-easpp", "no-edge", "single-stage"}) {
    NetworkConfig net = desk_network();
    LossWeights lw;
    TrainConfig tc = desk_train();
    apply_kv(ablation(name), net);
    apply_kv(ablation(name), lw);
    tc.seed = 1;
    tc.max_steps = kAblationSteps;
    tc.epochs = 1000;
    SpegNet model(net, tc.seed);
    train(model, lw, tc, train_set, {}, {});
    score[name] = validate(model, val_set, lw, 4).report.aggregate.s_alpha;
    std::printf("  criterion 10: %-12s val S %.4f\n", name.c_str(), score[name]);
    std::fflush(stdout);
  }
  for (const auto& [name, s] : score) {
    if (name == "full") continue;
    o.require(score["full"] >= s, "full >= " + name);
  }
  o.detail << kAblationSteps << " steps, " << train_set.size() << " train / " << val_set.size() << " val; S:";
  for (const auto& [name, s] : score) o.detail << " " << name << "=" << s;
  o.detail << " (" << seconds_since(t0) << " s)";
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria{
      {"shape law", shape_law},
      {"loss linearity", loss_linearity},
      {"gradient checks", gradient_checks},
      {"edge-influence schedule", edge_schedule},
      {"metric endpoints", metric_endpoints},
      {"metric oracle equivalence", metric_oracles},
      {"edge-band property", edge_band},
      {"overfit smoke test", overfit},
      {"determinism", determinism},
      {"ablation ordering", ablation_order},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    std::printf("criterion %2d %-26s %s  %s\n", id, criteria[i].first.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.str().c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  std::error_code ec;
  fs::remove_all(scratch_root(), ec);
  return failures == 0 ? 0 : 1;
}
