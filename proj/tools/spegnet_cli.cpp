// spegnet: synth | train | eval | infer
//
// Exit codes: 0 ok, 2 invalid flags or configuration, 3 I/O failure,
// 4 non-finite loss, 5 checkpoint/config mismatch.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "speg/config.hpp"
#include "speg/data.hpp"
#include "speg/decoder.hpp"
#include "speg/errors.hpp"
#include "speg/metrics.hpp"
#include "speg/model.hpp"
#include "speg/ops.hpp"
#include "speg/train.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using speg::KeyValues;

namespace {

enum Exit { kOk = 0, kUsage = 2, kIo = 3, kNonFinite = 4, kCheckpoint = 5 };

struct Common {
  std::string out;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> size;
};

struct Manifest {
  std::string command;
  KeyValues config;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> artifacts;
};

void write_text_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.parent_path() / (".tmp." + path.filename().string());
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) throw speg::IoError("cannot write " + tmp.string());
    f << text;
    if (!f) throw speg::IoError("cannot write " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw speg::IoError("cannot rename into " + path.string());
}

void write_manifest(const fs::path& dir, const Manifest& m, double seconds) {
  ordered_json j;
  j["command"] = m.command;
  j["seed"] = m.seed;
  ordered_json cfg = ordered_json::object();
  for (const auto& [k, v] : m.config) cfg[k] = v;
  j["config"] = cfg;
  j["inputs"] = m.inputs;
  j["artifacts"] = m.artifacts;
  j["wall_clock_seconds"] = seconds;
  write_text_atomic(dir / "manifest.json", j.dump(2) + "\n");
}

void check_size(int size) {
  if (size <= 0 || size % 32 != 0) {
    throw speg::ConfigError("--size must be a positive multiple of 32, got " +
                            std::to_string(size));
  }
}

// ---------------------------------------------------------------- synth

struct SynthFlags {
  Common common;
  std::optional<int> n;
  std::optional<double> contrast;
  std::optional<int> objects_min;
  std::optional<int> objects_max;
};

int run_synth(const SynthFlags& f) {
  KeyValues kv = speg::to_kv(speg::SynthConfig{});
  if (!f.common.config.empty()) kv = speg::merge_kv(kv, speg::read_kv_file(f.common.config));
  speg::SynthConfig cfg;
  speg::apply_kv(kv, cfg);
  if (f.n) cfg.num_images = *f.n;
  if (f.common.size) cfg.image_size = *f.common.size;
  if (f.common.seed) cfg.seed = *f.common.seed;
  if (f.contrast) cfg.contrast_delta = *f.contrast;
  if (f.objects_min) cfg.objects_min = *f.objects_min;
  if (f.objects_max) cfg.objects_max = *f.objects_max;
  cfg.validate();

  const auto t0 = std::chrono::steady_clock::now();
  const fs::path root = f.common.out;
  const int count = speg::synthesize(cfg, root);
  Manifest m{"synth", speg::to_kv(cfg), cfg.seed, {}, {}};
  for (const char* sub : {"images", "masks", "edges"}) m.artifacts.push_back((root / sub).string());
  write_manifest(root, m, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  std::cout << "wrote " << count << " samples to " << root.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainFlags {
  Common common;
  std::string data;
  std::string preset = "desk";
  std::string ablation = "full";
  std::optional<int> max_steps;
  std::optional<int> epochs;
  bool cache_edges = false;
  std::vector<std::string> set;
};

KeyValues resolve_train_config(const TrainFlags& f) {
  KeyValues kv = speg::merge_kv(speg::to_kv(speg::NetworkConfig{}), speg::to_kv(speg::LossWeights{}));
  kv = speg::merge_kv(kv, speg::to_kv(speg::TrainConfig{}));
  kv = speg::merge_kv(kv, speg::preset(f.preset));
  if (!f.common.config.empty()) kv = speg::merge_kv(kv, speg::read_kv_file(f.common.config));
  for (const auto& s : f.set) kv = speg::merge_kv(kv, speg::parse_kv(s));
  if (f.common.size) {
    check_size(*f.common.size);
    kv["model.input_size"] = std::to_string(*f.common.size);
  }
  if (f.common.seed) kv["train.seed"] = std::to_string(*f.common.seed);
  if (f.max_steps) kv["train.max_steps"] = std::to_string(*f.max_steps);
  if (f.epochs) kv["train.epochs"] = std::to_string(*f.epochs);
  kv = speg::merge_kv(kv, speg::ablation(f.ablation));
  return kv;
}

int run_train(const TrainFlags& f) {
  const KeyValues kv = resolve_train_config(f);
  speg::NetworkConfig net;
  speg::LossWeights lw;
  speg::TrainConfig tc;
  speg::apply_kv(kv, net);
  speg::apply_kv(kv, lw);
  speg::apply_kv(kv, tc);
  net.validate();
  lw.validate(net.decoder_stages);
  tc.validate();
  // Resolved config, canonical formatting.
  KeyValues resolved = speg::merge_kv(speg::to_kv(net), speg::to_kv(lw));
  resolved = speg::merge_kv(resolved, speg::to_kv(tc));
  resolved["ablation"] = f.ablation;
  resolved["preset"] = f.preset;

  const auto t0 = std::chrono::steady_clock::now();
  const fs::path out = f.common.out;
  fs::create_directories(out);
  speg::TrainOptions opts;
  opts.out_dir = out;
  opts.cache_edges = f.cache_edges;
  opts.on_step = [](const speg::LogRow& r) {
    std::cout << "step " << r.step << " epoch " << r.epoch << " loss " << speg::format_double(r.total)
              << "\n";
  };
  const speg::TrainResult res = speg::train(net, lw, tc, f.data, opts);
  Manifest m{"train", resolved, tc.seed, {f.data}, {}};
  for (const char* a : {"last.ckpt", "best.ckpt", "train_log.csv"}) {
    if (fs::exists(out / a)) m.artifacts.push_back((out / a).string());
  }
  write_manifest(out, m, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  std::cout << "trained " << res.steps << " steps over " << res.epochs << " epochs; best monitor "
            << speg::format_double(res.best) << "\n";
  return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalFlags {
  Common common;
  std::string pred;
  std::string gt;
  std::string e_variant = "adaptive";
};

int run_eval(const EvalFlags& f) {
  speg::metrics::EvalOptions opts;
  opts.e_variant = speg::metrics::parse_e_variant(f.e_variant);
  const auto t0 = std::chrono::steady_clock::now();
  const auto report = speg::metrics::evaluate_directory(f.pred, f.gt, opts);
  const fs::path out = f.common.out;
  write_text_atomic(out / "metrics.csv", report.to_csv());
  write_text_atomic(out / "metrics.json", report.to_json());
  Manifest m{"eval", {{"eval.e_variant", speg::metrics::to_string(opts.e_variant)}}, 0, {f.pred, f.gt},
             {(out / "metrics.csv").string(), (out / "metrics.json").string()}};
  write_manifest(out, m, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  const auto& a = report.aggregate;
  std::printf("images %zu skipped %zu  S %.4f  E(%s) %.4f  Fw %.4f  Fm %.4f  MAE %.4f\n",
              report.per_image.size(), report.skipped.size(), a.s_alpha,
              speg::metrics::to_string(opts.e_variant).c_str(), a.e_phi(opts.e_variant), a.f_w,
              a.f_m, a.mae);
  return kOk;
}

// ---------------------------------------------------------------- infer

struct InferFlags {
  Common common;
  std::string data;
  std::string checkpoint;
  std::optional<double> threshold;
};

std::vector<fs::path> list_images(fs::path dir) {
  if (fs::is_directory(dir / "images")) dir /= "images";
  if (!fs::is_directory(dir)) throw speg::IoError("missing directory " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    for (auto& ch : ext) ch = static_cast<char>(std::tolower(ch));
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw speg::IoError("no images in " + dir.string());
  return out;
}

int run_infer(const InferFlags& f) {
  const auto t0 = std::chrono::steady_clock::now();
  const speg::Checkpoint ck = speg::Checkpoint::load(f.checkpoint);
  speg::NetworkConfig net = ck.network_config();
  if (!f.common.config.empty()) {
    // Model keys in the file must agree with the checkpoint.
    const KeyValues file = speg::read_kv_file(f.common.config);
    const KeyValues ckv = speg::to_kv(net);
    for (const auto& [k, v] : file) {
      if (!k.starts_with("model.")) continue;
      speg::NetworkConfig probe = net;
      speg::apply_kv({{k, v}}, probe);
      if (speg::to_kv(probe) != ckv) {
        throw speg::CheckpointError("config key " + k + " = " + v + " disagrees with checkpoint (" +
                                    (ckv.count(k) ? ckv.at(k) : std::string("unset")) + ")");
      }
    }
  }
  auto model = speg::model_from_checkpoint(ck);
  const int size = f.common.size.value_or(net.input_size);
  check_size(size);
  const double threshold = f.threshold.value_or(net.mask_threshold);
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw speg::ConfigError("--threshold must lie in (0,1)");
  }

  const fs::path out = f.common.out;
  Manifest m{"infer", ck.network, 0, {f.data, f.checkpoint}, {}};
  m.config["infer.size"] = std::to_string(size);
  m.config["infer.threshold"] = speg::format_double(threshold);
  speg::NoGradGuard no_grad;
  for (const auto& path : list_images(f.data)) {
    const speg::ImageU8 img = speg::read_image(path);
    const speg::Tensor x = speg::preprocess(img, size);
    const auto fo = model->forward(x, false);
    speg::Plane prob(size, size);
    const auto& logits = fo.decode.p3.value();
    for (std::size_t i = 0; i < prob.size(); ++i) prob.data[i] = speg::ops::sigmoid(logits[i]);
    prob = speg::resize_plane(prob, img.height, img.width);
    speg::Plane mask(img.height, img.width);
    for (std::size_t i = 0; i < prob.size(); ++i) mask.data[i] = prob.data[i] > threshold ? 1.0 : 0.0;
    const std::string id = path.stem().string();
    const fs::path p1 = out / "prob" / (id + ".png");
    const fs::path p2 = out / "mask" / (id + ".png");
    speg::write_gray_png(p1, prob);
    speg::write_gray_png(p2, mask);
    m.artifacts.push_back(p1.string());
    m.artifacts.push_back(p2.string());
  }
  write_manifest(out, m, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  std::cout << "wrote " << m.artifacts.size() / 2 << " predictions to " << out.string() << "\n";
  return kOk;
}

void add_common(CLI::App* cmd, Common& c, bool out_required = true) {
  auto* o = cmd->add_option("--out", c.out, "Output directory");
  if (out_required) o->required();
  cmd->add_option("--config", c.config, "key = value configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Random seed");
  cmd->add_option("--size", c.size, "Image / network input size (multiple of 32)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SPEGNet camouflaged object detection pipeline"};
  app.require_subcommand(1);

  SynthFlags synth;
  auto* cs = app.add_subcommand("synth", "Generate a synthetic camouflage dataset");
  add_common(cs, synth.common);
  cs->add_option("--n", synth.n, "Number of images");
  cs->add_option("--contrast", synth.contrast, "Foreground intensity offset in [0,1]");
  cs->add_option("--objects-min", synth.objects_min, "Fewest objects per image");
  cs->add_option("--objects-max", synth.objects_max, "Most objects per image");

  TrainFlags train;
  auto* ct = app.add_subcommand("train", "Train a model");
  add_common(ct, train.common);
  ct->add_option("--data", train.data, "Dataset root (images/, masks/)")->required();
  ct->add_option("--preset", train.preset, "desk or large")->check(CLI::IsMember({"desk", "large"}));
  ct->add_option("--ablation", train.ablation,
                 "full, no-ca, no-easpp, no-edge, single-stage, flat-encoder");
  ct->add_option("--max-steps", train.max_steps, "Stop after this many optimizer steps");
  ct->add_option("--epochs", train.epochs, "Number of epochs");
  ct->add_flag("--cache-edges", train.cache_edges, "Write generated edge maps into the dataset");
  ct->add_option("--set", train.set, "Extra key=value override (repeatable)");

  EvalFlags eval;
  auto* ce = app.add_subcommand("eval", "Score predictions against ground truth");
  add_common(ce, eval.common);
  ce->add_option("--pred", eval.pred, "Prediction directory")->required();
  ce->add_option("--gt", eval.gt, "Ground-truth directory (or dataset root)")->required();
  ce->add_option("--e-variant", eval.e_variant, "Headline E-measure: adaptive, mean, max");

  InferFlags infer;
  auto* ci = app.add_subcommand("infer", "Predict masks for a directory of images");
  add_common(ci, infer.common);
  ci->add_option("--data", infer.data, "Image directory (or dataset root)")->required();
  ci->add_option("--checkpoint", infer.checkpoint, "Checkpoint file")->required();
  ci->add_option("--threshold", infer.threshold, "Mask threshold in (0,1)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*cs) return run_synth(synth);
    if (*ct) return run_train(train);
    if (*ce) return run_eval(eval);
    if (*ci) return run_infer(infer);
  } catch (const speg::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kCheckpoint;
  } catch (const speg::NonFiniteError& e) {
    std::cerr << "aborted: " << e.what() << "\n";
    return kNonFinite;
  } catch (const speg::ConfigError& e) {
    std::cerr << "invalid configuration: " << e.what() << "\n";
    return kUsage;
  } catch (const speg::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kUsage;
}
