#pragma once

// Configuration records for every stage of the pipeline and their flat
// `key = value` text form. Keys are dotted: model.*, loss.*, train.*,
// synth.*. Lists are comma separated.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace speg {

using KeyValues = std::map<std::string, std::string>;

enum class EncoderMode { hierarchical, flat };

struct NetworkConfig {
  std::array<int, 4> base_channels{144, 288, 576, 1152};
  // Uniform divisor applied to every channel count for desk-scale runs.
  double channel_scale = 1.0;
  int context_channels = 256;
  int edge_channels = 64;
  // Fraction of edge guidance blended in at decoder stages 1..3.
  std::array<double, 3> edge_influence{0.20, 0.33, 0.00};
  std::array<int, 3> decoder_channels{128, 64, 32};
  bool enable_channel_attention = true;
  bool enable_easpp = true;
  bool enable_edge_guidance = true;
  int decoder_stages = 3;
  EncoderMode encoder_mode = EncoderMode::hierarchical;
  int input_size = 512;

  std::vector<int> easpp_dilations{1, 2, 4, 8};
  int se_reduction = 16;
  int efe_depth = 2;
  double mask_threshold = 0.5;
  // Residual blocks per hierarchical stage, and in the flat token encoder.
  std::array<int, 4> encoder_depths{1, 1, 1, 1};
  int flat_depth = 2;
  int mlp_ratio = 2;
  // Descriptive metadata; recorded in manifests, not switchable.
  std::string encoder_block = "dwconv3x3-mlp-residual";
  std::string norm = "batchnorm-relu";

  void validate() const;
  // channels / channel_scale; throws ConfigError unless a positive integer.
  int scaled(int channels) const;
  std::array<int, 4> stage_channels() const;
  int context_width() const { return scaled(context_channels); }
  int edge_width() const { return scaled(edge_channels); }
  std::array<int, 3> decoder_widths() const;
  // Edge influence after applying enable_edge_guidance.
  std::array<double, 3> effective_edge_influence() const;
};

struct LossWeights {
  // Coarse to fine; single-stage decoding uses {1.0}.
  std::vector<double> stage_weights{0.2, 0.3, 0.5};
  double lambda_e = 0.75;
  double lambda_bce = 1.25;
  double lambda_iou = 1.0;
  double lambda_b = 2.0;
  double focal_alpha = 0.75;
  double focal_gamma = 2.0;
  double epsilon = 1e-6;

  void validate(int decoder_stages) const;
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 4;
  double lr_head = 1e-4;
  double lr_encoder = 5e-5;
  double weight_decay = 1e-5;
  double plateau_factor = 0.7;
  int plateau_patience = 5;
  double lr_min = 1e-6;
  double grad_clip_norm = 1.0;
  std::uint64_t seed = 1;
  double val_fraction = 0.10;
  // Stop after this many optimizer steps (0 = run all epochs).
  int max_steps = 0;
  bool augment_flip = true;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

struct SynthConfig {
  int image_size = 128;
  int num_images = 8;
  int objects_min = 1;
  int objects_max = 2;
  // Foreground mean-intensity offset as a fraction of full scale.
  double contrast_delta = 0.3;
  // Cell size in pixels of the coarsest noise octave.
  double texture_scale = 16.0;
  std::uint64_t seed = 7;

  void validate() const;
};

KeyValues to_kv(const NetworkConfig& cfg);
KeyValues to_kv(const LossWeights& cfg);
KeyValues to_kv(const TrainConfig& cfg);
KeyValues to_kv(const SynthConfig& cfg);

// Apply every key with the record's prefix; unknown keys under that prefix
// raise ConfigError. Keys with other prefixes are ignored.
void apply_kv(const KeyValues& kv, NetworkConfig& cfg);
void apply_kv(const KeyValues& kv, LossWeights& cfg);
void apply_kv(const KeyValues& kv, TrainConfig& cfg);
void apply_kv(const KeyValues& kv, SynthConfig& cfg);

KeyValues parse_kv(std::string_view text);
KeyValues read_kv_file(const std::filesystem::path& path);
std::string format_kv(const KeyValues& kv);
// Later maps win.
KeyValues merge_kv(const KeyValues& base, const KeyValues& overrides);

std::string format_double(double v);

}  // namespace speg
