#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "speg/config.hpp"
#include "speg/data.hpp"
#include "speg/metrics.hpp"
#include "speg/model.hpp"
#include "speg/objectives.hpp"

namespace speg {

/// AdamW with decoupled weight decay and one learning rate per parameter
/// group. Moments exist for trainable entries only.
class AdamW {
 public:
  AdamW(const nn::ParameterStore& store, double beta1, double beta2, double eps,
        double weight_decay);

  // lrs indexed by ParamGroup (encoder, head).
  void step(nn::ParameterStore& store, const std::array<double, 2>& lrs);

  std::int64_t steps() const { return t_; }
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_;  // parallel to store entries; empty for buffers
  std::vector<Tensor> v_;
};

/// Multiplies every learning rate by `factor` once the monitored value has
/// failed to improve (relative threshold 1e-4) for more than `patience`
/// consecutive epochs. Rates never drop below `lr_min`.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor, int patience, double lr_min);

  // Returns true when the rates were reduced.
  bool step(double monitored, std::array<double, 2>& lrs);

  double best() const { return best_; }
  int bad_epochs() const { return bad_; }
  void restore(double best, int bad) {
    best_ = best;
    bad_ = bad;
  }

 private:
  double factor_;
  int patience_;
  double lr_min_;
  double best_;
  int bad_ = 0;
};

struct ClipResult {
  double norm = 0.0;  // before clipping
  bool clipped = false;
};
ClipResult clip_global_norm(const std::vector<Tensor*>& grads, double threshold);
// Over the gradients of every trainable store entry.
ClipResult clip_global_norm(nn::ParameterStore& store, double threshold);

struct CheckpointTensor {
  std::string name;
  nn::ParamGroup group = nn::ParamGroup::head;
  bool trainable = true;
  Tensor value;
  Tensor m;  // empty when absent
  Tensor v;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  std::uint32_t version = kVersion;
  KeyValues network;
  KeyValues loss;
  KeyValues train;
  std::int64_t epoch = 0;
  std::int64_t step = 0;
  double best = 0.0;
  std::array<double, 2> lrs{};
  double scheduler_best = 0.0;
  std::int64_t scheduler_bad = 0;
  std::int64_t adam_steps = 0;
  std::vector<CheckpointTensor> tensors;

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  NetworkConfig network_config() const;
};

// Copies weights (and moments, when given) into a checkpoint body.
void capture(Checkpoint& ck, const SpegNet& model, const AdamW* optimizer);
// Writes weights back; CheckpointError on any name or shape mismatch.
void restore(const Checkpoint& ck, SpegNet& model, AdamW* optimizer);
std::unique_ptr<SpegNet> model_from_checkpoint(const Checkpoint& ck);

struct Batch {
  Tensor images;  // [B, 3, S, S]
  Tensor masks;   // [B, 1, S, S]
  Tensor edges;   // [B, 1, S, S]
};

// Samples resized to `size`; flips[i] mirrors sample i horizontally.
Batch make_batch(const std::vector<const Sample*>& samples, int size,
                 const std::vector<bool>& flips);

struct LogRow {
  std::int64_t step = 0;
  int epoch = 0;
  double total = 0;
  std::array<double, 3> seg{};
  double edge = 0;
  double lr = 0;
};
std::string log_header();
std::string format_log_row(const LogRow& row);

struct ValidationResult {
  double mean_loss = 0.0;
  metrics::MetricReport report;
};

// Evaluation-mode pass in sample order; metrics on the binarized final
// prediction at the network input resolution.
ValidationResult validate(const SpegNet& model, const std::vector<Sample>& samples,
                          const LossWeights& lw, int batch_size = 1);

struct TrainOptions {
  std::filesystem::path out_dir;  // checkpoints and log; empty = none
  bool cache_edges = false;
  // Called after every optimizer step.
  std::function<void(const LogRow&)> on_step;
};

struct TrainResult {
  std::vector<LogRow> log;
  std::vector<double> val_losses;  // per epoch; empty validation uses train loss
  std::int64_t steps = 0;
  int epochs = 0;
  double best = 0.0;
  Checkpoint last;
};

// Trains on the train split of `root`.
TrainResult train(const NetworkConfig& net, const LossWeights& lw, const TrainConfig& tc,
                  const std::filesystem::path& root, const TrainOptions& options = {});
// Same, on already loaded samples; `model` is trained in place.
TrainResult train(SpegNet& model, const LossWeights& lw, const TrainConfig& tc,
                  const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const TrainOptions& options = {});

// Overrides for `--preset`: "desk" or "large".
KeyValues preset(const std::string& name);

// Overrides for `--ablation`; "full" is the unmodified model.
KeyValues ablation(const std::string& name);
const std::vector<std::string>& ablation_names();

}  // namespace speg
