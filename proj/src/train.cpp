#include "speg/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "speg/decoder.hpp"
#include "speg/errors.hpp"

namespace fs = std::filesystem;

namespace speg {

AdamW::AdamW(const nn::ParameterStore& store, double beta1, double beta2, double eps,
             double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
  for (const auto& e : store.entries()) {
    if (e.trainable) {
      m_.emplace_back(e.var.shape(), 0.0);
      v_.emplace_back(e.var.shape(), 0.0);
    } else {
      m_.emplace_back();
      v_.emplace_back();
    }
  }
}

void AdamW::step(nn::ParameterStore& store, const std::array<double, 2>& lrs) {
  auto& entries = store.entries();
  if (entries.size() != m_.size()) throw Error("optimizer/store size mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const double sqrt_bc2 = std::sqrt(bc2);
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto& e = entries[k];
    if (!e.trainable || !e.var.has_grad()) continue;
    const double lr = lrs[static_cast<int>(e.group)];
    Var var = e.var;
    double* p = var.mutable_value().data();
    const double* g = var.grad_buffer().data();
    double* m = m_[k].data();
    double* v = v_[k].data();
    const double decay = 1.0 - lr * weight_decay_;
    const double step = lr / bc1;
    const auto n = static_cast<std::ptrdiff_t>(var.value().size());
#pragma omp parallel for simd schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      p[i] *= decay;
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      p[i] -= step * m[i] / (std::sqrt(v[i]) / sqrt_bc2 + eps_);
    }
  }
}

PlateauScheduler::PlateauScheduler(double factor, int patience, double lr_min)
    : factor_(factor),
      patience_(patience),
      lr_min_(lr_min),
      best_(std::numeric_limits<double>::infinity()) {}

bool PlateauScheduler::step(double monitored, std::array<double, 2>& lrs) {
  if (monitored < best_ * (1.0 - 1e-4)) {
    best_ = monitored;
    bad_ = 0;
  } else {
    ++bad_;
  }
  if (bad_ <= patience_) return false;
  bad_ = 0;
  bool changed = false;
  for (double& lr : lrs) {
    const double next = std::max(lr * factor_, lr_min_);
    if (lr - next > 1e-8) {
      lr = next;
      changed = true;
    }
  }
  return changed;
}

ClipResult clip_global_norm(const std::vector<Tensor*>& grads, double threshold) {
  double sq = 0.0;
  for (const Tensor* g : grads)
    for (double v : g->values()) sq += v * v;
  ClipResult r;
  r.norm = std::sqrt(sq);
  if (!std::isfinite(r.norm)) throw NonFiniteError("gradient norm is not finite");
  if (r.norm > threshold) {
    const double s = threshold / r.norm;
    for (Tensor* g : grads)
      for (double& v : g->values()) v *= s;
    r.clipped = true;
  }
  return r;
}

ClipResult clip_global_norm(nn::ParameterStore& store, double threshold) {
  std::vector<Tensor*> grads;
  for (const auto& e : store.entries()) {
    if (!e.trainable || !e.var.has_grad()) continue;
    Var v = e.var;
    grads.push_back(&v.grad_buffer());
  }
  return clip_global_norm(grads, threshold);
}

namespace {

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_ += s;
  }
  void kv(const KeyValues& m) {
    pod<std::uint64_t>(m.size());
    for (const auto& [k, v] : m) {
      str(k);
      str(v);
    }
  }
  void tensor(const Tensor& t) {
    pod<std::uint8_t>(t.empty() ? 0 : 1);
    if (t.empty()) return;
    const Shape& s = t.shape();
    pod<std::int32_t>(s.n);
    pod<std::int32_t>(s.c);
    pod<std::int32_t>(s.h);
    pod<std::int32_t>(s.w);
    out_.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
  }
  std::string take() { return std::move(out_); }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}
  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, s_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string v = s_.substr(pos_, n);
    pos_ += n;
    return v;
  }
  KeyValues kv() {
    KeyValues m;
    const auto n = pod<std::uint64_t>();
    for (std::uint64_t i = 0; i < n; ++i) {
      std::string k = str();
      m[k] = str();
    }
    return m;
  }
  Tensor tensor() {
    if (pod<std::uint8_t>() == 0) return {};
    Shape s;
    s.n = pod<std::int32_t>();
    s.c = pod<std::int32_t>();
    s.h = pod<std::int32_t>();
    s.w = pod<std::int32_t>();
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) throw CheckpointError("checkpoint: bad shape");
    const std::size_t bytes = s.numel() * sizeof(double);
    need(bytes);
    std::vector<double> v(s.numel());
    std::memcpy(v.data(), s_.data() + pos_, bytes);
    pos_ += bytes;
    return Tensor(s, std::move(v));
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string v = s_.substr(pos_, n);
    pos_ += n;
    return v;
  }
  bool done() const { return pos_ == s_.size(); }

 private:
  void need(std::size_t n) const {
    if (s_.size() - pos_ < n) throw CheckpointError("checkpoint: truncated file");
  }
  const std::string& s_;
  std::size_t pos_ = 0;
};

constexpr char kMagic[8] = {'S', 'P', 'E', 'G', 'C', 'K', 'P', '1'};

}  // namespace

std::string Checkpoint::serialize() const {
  Writer w;
  w.raw(kMagic, 8);
  w.pod<std::uint32_t>(version);
  w.kv(network);
  w.kv(loss);
  w.kv(train);
  w.pod<std::int64_t>(epoch);
  w.pod<std::int64_t>(step);
  w.pod<double>(best);
  w.pod<double>(lrs[0]);
  w.pod<double>(lrs[1]);
  w.pod<double>(scheduler_best);
  w.pod<std::int64_t>(scheduler_bad);
  w.pod<std::int64_t>(adam_steps);
  w.pod<std::uint64_t>(tensors.size());
  for (const auto& t : tensors) {
    w.str(t.name);
    w.pod<std::uint8_t>(t.group == nn::ParamGroup::encoder ? 0 : 1);
    w.pod<std::uint8_t>(t.trainable ? 1 : 0);
    w.tensor(t.value);
    w.tensor(t.m);
    w.tensor(t.v);
  }
  return w.take();
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  Reader r(bytes);
  if (bytes.size() < 8 || r.raw(8) != std::string(kMagic, 8)) {
    throw CheckpointError("checkpoint: bad magic (expected SPEGCKP1)");
  }
  Checkpoint ck;
  ck.version = r.pod<std::uint32_t>();
  if (ck.version != kVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(ck.version));
  }
  ck.network = r.kv();
  ck.loss = r.kv();
  ck.train = r.kv();
  ck.epoch = r.pod<std::int64_t>();
  ck.step = r.pod<std::int64_t>();
  ck.best = r.pod<double>();
  ck.lrs[0] = r.pod<double>();
  ck.lrs[1] = r.pod<double>();
  ck.scheduler_best = r.pod<double>();
  ck.scheduler_bad = r.pod<std::int64_t>();
  ck.adam_steps = r.pod<std::int64_t>();
  const auto n = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    CheckpointTensor t;
    t.name = r.str();
    t.group = r.pod<std::uint8_t>() == 0 ? nn::ParamGroup::encoder : nn::ParamGroup::head;
    t.trainable = r.pod<std::uint8_t>() != 0;
    t.value = r.tensor();
    t.m = r.tensor();
    t.v = r.tensor();
    ck.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes");
  return ck;
}

void Checkpoint::save(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.parent_path() / (".tmp." + path.filename().string());
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    const std::string bytes = serialize();
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("cannot write " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename into " + path.string() + ": " + ec.message());
}

Checkpoint Checkpoint::load(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize(ss.str());
}

NetworkConfig Checkpoint::network_config() const {
  NetworkConfig cfg;
  try {
    apply_kv(network, cfg);
    cfg.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  }
  return cfg;
}

void capture(Checkpoint& ck, const SpegNet& model, const AdamW* optimizer) {
  ck.network = to_kv(model.config());
  ck.tensors.clear();
  const auto& entries = model.parameters().entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto& e = entries[k];
    CheckpointTensor t;
    t.name = e.name;
    t.group = e.group;
    t.trainable = e.trainable;
    t.value = e.var.value();
    if (optimizer && e.trainable) {
      t.m = optimizer->first_moments()[k];
      t.v = optimizer->second_moments()[k];
    }
    ck.tensors.push_back(std::move(t));
  }
  if (optimizer) ck.adam_steps = optimizer->steps();
}

void restore(const Checkpoint& ck, SpegNet& model, AdamW* optimizer) {
  auto& entries = model.parameters().entries();
  if (entries.size() != ck.tensors.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(ck.tensors.size()) +
                          " tensors, model has " + std::to_string(entries.size()));
  }
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto& t = ck.tensors[k];
    if (t.name != entries[k].name || t.value.shape() != entries[k].var.shape()) {
      throw CheckpointError("checkpoint tensor " + t.name + " " + t.value.shape().str() +
                            " does not match model tensor " + entries[k].name + " " +
                            entries[k].var.shape().str());
    }
  }
  for (std::size_t k = 0; k < entries.size(); ++k) {
    Var v = entries[k].var;
    v.mutable_value() = ck.tensors[k].value;
    if (optimizer && entries[k].trainable && !ck.tensors[k].m.empty()) {
      optimizer->first_moments()[k] = ck.tensors[k].m;
      optimizer->second_moments()[k] = ck.tensors[k].v;
    }
  }
  if (optimizer) optimizer->set_steps(ck.adam_steps);
}

std::unique_ptr<SpegNet> model_from_checkpoint(const Checkpoint& ck) {
  auto model = std::make_unique<SpegNet>(ck.network_config(), 0);
  restore(ck, *model, nullptr);
  return model;
}

Batch make_batch(const std::vector<const Sample*>& samples, int size,
                 const std::vector<bool>& flips) {
  const int b = static_cast<int>(samples.size());
  Batch out{Tensor({b, 3, size, size}), Tensor({b, 1, size, size}), Tensor({b, 1, size, size})};
  const std::size_t plane = static_cast<std::size_t>(size) * size;
#pragma omp parallel for schedule(static) num_threads(num_workers())
  for (int i = 0; i < b; ++i) {
    const Sample& s = *samples[i];
    const bool flip = i < static_cast<int>(flips.size()) && flips[i];
    const Tensor img = preprocess(flip ? flip_horizontal(s.image) : s.image, size);
    Plane mask = flip ? flip_horizontal(s.mask) : s.mask;
    Plane edge;
    if (mask.height == size && mask.width == size) {
      edge = flip ? flip_horizontal(s.edge) : s.edge;
    } else {
      mask = threshold_plane(resize_plane(mask, size, size), 0.5);
      edge = make_edge_map(mask);
    }
    std::copy(img.data(), img.data() + 3 * plane, out.images.data() + i * 3 * plane);
    std::copy(mask.data.begin(), mask.data.end(), out.masks.data() + i * plane);
    std::copy(edge.data.begin(), edge.data.end(), out.edges.data() + i * plane);
  }
  return out;
}

std::string log_header() { return "step,epoch,total,seg1,seg2,seg3,edge,lr"; }

std::string format_log_row(const LogRow& r) {
  return std::to_string(r.step) + "," + std::to_string(r.epoch) + "," + format_double(r.total) +
         "," + format_double(r.seg[0]) + "," + format_double(r.seg[1]) + "," +
         format_double(r.seg[2]) + "," + format_double(r.edge) + "," + format_double(r.lr);
}

ValidationResult validate(const SpegNet& model, const std::vector<Sample>& samples,
                          const LossWeights& lw, int batch_size) {
  NoGradGuard no_grad;
  ValidationResult out;
  const int size = model.config().input_size;
  double loss_sum = 0.0;
  batch_size = std::max(1, batch_size);
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    std::vector<const Sample*> ptrs;
    for (std::size_t i = start; i < end; ++i) ptrs.push_back(&samples[i]);
    const Batch batch = make_batch(ptrs, size, {});
    const ForwardOutputs fo = model.forward(batch.images, false);
    const LossBreakdown lb = total_loss(fo.decode, fo.edge, batch.masks, batch.edges, lw);
    loss_sum += lb.total * static_cast<double>(ptrs.size());
    const Tensor mask = binarize(fo.decode.p3.value(), model.config().mask_threshold);
    const std::size_t plane = static_cast<std::size_t>(size) * size;
    for (std::size_t i = 0; i < ptrs.size(); ++i) {
      Plane pred(size, size), gt(size, size);
      std::copy_n(mask.data() + i * plane, plane, pred.data.begin());
      std::copy_n(batch.masks.data() + i * plane, plane, gt.data.begin());
      out.report.per_image.push_back(metrics::evaluate_pair(ptrs[i]->id, pred, gt));
    }
  }
  out.mean_loss = samples.empty() ? 0.0 : loss_sum / static_cast<double>(samples.size());
  out.report.aggregate = metrics::aggregate(out.report.per_image);
  return out;
}

namespace {

void append_log(const fs::path& path, const LogRow& row) {
  const bool fresh = !fs::exists(path);
  std::ofstream f(path, std::ios::app);
  if (!f) throw IoError("cannot append to " + path.string());
  if (fresh) f << log_header() << "\n";
  f << format_log_row(row) << "\n";
}

}  // namespace

TrainResult train(SpegNet& model, const LossWeights& lw, const TrainConfig& tc,
                  const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const TrainOptions& options) {
  tc.validate();
  lw.validate(model.config().decoder_stages);
  if (train_set.empty()) throw ConfigError("training set is empty");
  auto& store = model.parameters();
  AdamW opt(store, tc.adam_beta1, tc.adam_beta2, tc.adam_eps, tc.weight_decay);
  PlateauScheduler sched(tc.plateau_factor, tc.plateau_patience, tc.lr_min);
  std::array<double, 2> lrs{tc.lr_encoder, tc.lr_head};
  std::mt19937_64 rng(tc.seed);
  std::bernoulli_distribution coin(0.5);

  const fs::path log_path = options.out_dir.empty() ? fs::path() : options.out_dir / "train_log.csv";
  if (!options.out_dir.empty()) fs::create_directories(options.out_dir);

  TrainResult result;
  result.best = std::numeric_limits<double>::infinity();
  Checkpoint ck;
  ck.loss = to_kv(lw);
  ck.train = to_kv(tc);
  const int size = model.config().input_size;
  bool stop = false;
  for (int epoch = 1; epoch <= tc.epochs && !stop; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    int epoch_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t end = std::min(order.size(), start + tc.batch_size);
      std::vector<const Sample*> ptrs;
      std::vector<bool> flips;
      for (std::size_t i = start; i < end; ++i) {
        ptrs.push_back(&train_set[order[i]]);
        flips.push_back(tc.augment_flip && coin(rng));
      }
      const Batch batch = make_batch(ptrs, size, flips);
      store.zero_grad();
      const ForwardOutputs fo = model.forward(batch.images, true);
      const LossBreakdown lb = total_loss(fo.decode, fo.edge, batch.masks, batch.edges, lw);
      if (!std::isfinite(lb.total)) {
        throw NonFiniteError("non-finite loss at step " + std::to_string(result.steps + 1));
      }
      backward(lb.total_var);
      clip_global_norm(store, tc.grad_clip_norm);
      opt.step(store, lrs);
      ++result.steps;

      LogRow row{result.steps, epoch, lb.total, lb.seg_losses, lb.edge_loss, lrs[1]};
      result.log.push_back(row);
      if (!log_path.empty()) append_log(log_path, row);
      if (options.on_step) options.on_step(row);
      epoch_loss += lb.total;
      ++epoch_batches;
      if (tc.max_steps > 0 && result.steps >= tc.max_steps) {
        stop = true;
        break;
      }
    }
    const double monitored = val_set.empty()
                                 ? epoch_loss / std::max(1, epoch_batches)
                                 : validate(model, val_set, lw, tc.batch_size).mean_loss;
    result.val_losses.push_back(monitored);
    result.epochs = epoch;
    sched.step(monitored, lrs);

    ck.epoch = epoch;
    ck.step = result.steps;
    ck.lrs = lrs;
    ck.scheduler_best = sched.best();
    ck.scheduler_bad = sched.bad_epochs();
    const bool improved = monitored < result.best;
    if (improved) result.best = monitored;
    ck.best = result.best;
    capture(ck, model, &opt);
    if (!options.out_dir.empty()) {
      if (improved) ck.save(options.out_dir / "best.ckpt");
      ck.save(options.out_dir / "last.ckpt");
    }
  }
  result.last = std::move(ck);
  return result;
}

TrainResult train(const NetworkConfig& net, const LossWeights& lw, const TrainConfig& tc,
                  const fs::path& root, const TrainOptions& options) {
  LoadOptions lo;
  lo.val_fraction = tc.val_fraction;
  lo.seed = tc.seed;
  lo.cache_edges = options.cache_edges;
  const auto train_set = load_dataset(root, Split::train, lo);
  const auto val_set = load_dataset(root, Split::val, lo);
  SpegNet model(net, tc.seed);
  return train(model, lw, tc, train_set, val_set, options);
}

KeyValues preset(const std::string& name) {
  if (name == "desk") {
    return {{"model.input_size", "128"}, {"model.channel_scale", "8"},
            {"train.batch_size", "4"},   {"train.epochs", "30"},
            {"train.lr_head", "1e-3"},   {"train.lr_encoder", "5e-4"}};
  }
  if (name == "large") {
    return {{"model.input_size", "512"},     {"model.channel_scale", "1"},
            {"train.batch_size", "42"},      {"train.epochs", "150"},
            {"train.lr_head", "1e-4"},       {"train.lr_encoder", "5e-05"},
            {"train.weight_decay", "1e-05"}, {"train.plateau_factor", "0.7"},
            {"train.plateau_patience", "5"}, {"train.lr_min", "1e-06"},
            {"train.grad_clip_norm", "1"},   {"train.val_fraction", "0.1"}};
  }
  throw ConfigError("unknown preset '" + name + "' (desk, large)");
}

const std::vector<std::string>& ablation_names() {
  static const std::vector<std::string> names{"full", "no-ca", "no-easpp", "no-edge",
                                              "single-stage", "flat-encoder"};
  return names;
}

KeyValues ablation(const std::string& name) {
  if (name == "full") return {};
  if (name == "no-ca") return {{"model.enable_channel_attention", "false"}};
  if (name == "no-easpp") return {{"model.enable_easpp", "false"}};
  if (name == "no-edge") {
    return {{"model.enable_edge_guidance", "false"}, {"model.edge_influence", "0, 0, 0"}};
  }
  if (name == "single-stage") return {{"model.decoder_stages", "1"}, {"loss.stage_weights", "1"}};
  if (name == "flat-encoder") return {{"model.encoder_mode", "flat"}};
  std::string valid;
  for (const auto& n : ablation_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw ConfigError("unknown ablation '" + name + "' (valid: " + valid + ")");
}

}  // namespace speg
