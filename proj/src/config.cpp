#include "speg/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "speg/errors.hpp"

namespace speg {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(trim(s.substr(start, comma == std::string_view::npos
                                           ? std::string_view::npos
                                           : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double to_double(const std::string& key, std::string_view s) {
  const std::string t = trim(s);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw ConfigError("invalid number for " + key + ": '" + t + "'");
  }
  return v;
}

long long to_int(const std::string& key, std::string_view s) {
  const std::string t = trim(s);
  long long v = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw ConfigError("invalid integer for " + key + ": '" + t + "'");
  }
  return v;
}

bool to_bool(const std::string& key, std::string_view s) {
  const std::string t = trim(s);
  if (t == "true" || t == "on" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "off" || t == "0" || t == "no") return false;
  throw ConfigError("invalid flag for " + key + ": '" + t + "'");
}

template <typename T>
std::vector<T> to_list(const std::string& key, std::string_view s) {
  std::vector<T> out;
  for (const auto& item : split_list(s)) {
    if constexpr (std::is_integral_v<T>) {
      out.push_back(static_cast<T>(to_int(key, item)));
    } else {
      out.push_back(to_double(key, item));
    }
  }
  return out;
}

template <typename T, std::size_t N>
std::array<T, N> to_array(const std::string& key, std::string_view s) {
  const auto list = to_list<T>(key, s);
  if (list.size() != N) {
    throw ConfigError(key + " expects " + std::to_string(N) + " values, got " +
                      std::to_string(list.size()));
  }
  std::array<T, N> out{};
  std::copy(list.begin(), list.end(), out.begin());
  return out;
}

template <typename Range>
std::string join(const Range& r) {
  std::string out;
  bool first = true;
  for (const auto& v : r) {
    if (!first) out += ", ";
    first = false;
    if constexpr (std::is_floating_point_v<std::decay_t<decltype(v)>>) {
      out += format_double(v);
    } else {
      out += std::to_string(v);
    }
  }
  return out;
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

template <typename T>
struct Field {
  std::string key;
  std::function<std::string(const T&)> get;
  std::function<void(T&, const std::string&, std::string_view)> set;
};

#define SPEG_FIELD_NUM(T, prefix, name, conv)                                 \
  Field<T> {                                                                  \
    prefix #name, [](const T& c) { return num_str(c.name); },                 \
        [](T& c, const std::string& k, std::string_view v) {                  \
          c.name = static_cast<decltype(c.name)>(conv(k, v));                 \
        }                                                                     \
  }

std::string num_str(double v) { return format_double(v); }
std::string num_str(int v) { return std::to_string(v); }
std::string num_str(std::uint64_t v) { return std::to_string(v); }

const std::vector<Field<NetworkConfig>>& network_fields() {
  using T = NetworkConfig;
  static const std::vector<Field<T>> fields = {
      {"model.base_channels", [](const T& c) { return join(c.base_channels); },
       [](T& c, const std::string& k, std::string_view v) {
         c.base_channels = to_array<int, 4>(k, v);
       }},
      SPEG_FIELD_NUM(T, "model.", channel_scale, to_double),
      SPEG_FIELD_NUM(T, "model.", context_channels, to_int),
      SPEG_FIELD_NUM(T, "model.", edge_channels, to_int),
      {"model.edge_influence", [](const T& c) { return join(c.edge_influence); },
       [](T& c, const std::string& k, std::string_view v) {
         c.edge_influence = to_array<double, 3>(k, v);
       }},
      {"model.decoder_channels",
       [](const T& c) { return join(c.decoder_channels); },
       [](T& c, const std::string& k, std::string_view v) {
         c.decoder_channels = to_array<int, 3>(k, v);
       }},
      {"model.enable_channel_attention",
       [](const T& c) { return bool_str(c.enable_channel_attention); },
       [](T& c, const std::string& k, std::string_view v) {
         c.enable_channel_attention = to_bool(k, v);
       }},
      {"model.enable_easpp", [](const T& c) { return bool_str(c.enable_easpp); },
       [](T& c, const std::string& k, std::string_view v) {
         c.enable_easpp = to_bool(k, v);
       }},
      {"model.enable_edge_guidance",
       [](const T& c) { return bool_str(c.enable_edge_guidance); },
       [](T& c, const std::string& k, std::string_view v) {
         c.enable_edge_guidance = to_bool(k, v);
       }},
      SPEG_FIELD_NUM(T, "model.", decoder_stages, to_int),
      {"model.encoder_mode",
       [](const T& c) {
         return std::string(c.encoder_mode == EncoderMode::flat ? "flat"
                                                                : "hierarchical");
       },
       [](T& c, const std::string& k, std::string_view v) {
         const std::string t = trim(v);
         if (t == "flat") {
           c.encoder_mode = EncoderMode::flat;
         } else if (t == "hierarchical") {
           c.encoder_mode = EncoderMode::hierarchical;
         } else {
           throw ConfigError(k + " must be hierarchical or flat, got '" + t + "'");
         }
       }},
      SPEG_FIELD_NUM(T, "model.", input_size, to_int),
      {"model.easpp_dilations", [](const T& c) { return join(c.easpp_dilations); },
       [](T& c, const std::string& k, std::string_view v) {
         c.easpp_dilations = to_list<int>(k, v);
       }},
      SPEG_FIELD_NUM(T, "model.", se_reduction, to_int),
      SPEG_FIELD_NUM(T, "model.", efe_depth, to_int),
      SPEG_FIELD_NUM(T, "model.", mask_threshold, to_double),
      {"model.encoder_depths", [](const T& c) { return join(c.encoder_depths); },
       [](T& c, const std::string& k, std::string_view v) {
         c.encoder_depths = to_array<int, 4>(k, v);
       }},
      SPEG_FIELD_NUM(T, "model.", flat_depth, to_int),
      SPEG_FIELD_NUM(T, "model.", mlp_ratio, to_int),
      {"model.encoder_block", [](const T& c) { return c.encoder_block; },
       [](T& c, const std::string&, std::string_view v) {
         c.encoder_block = trim(v);
       }},
      {"model.norm", [](const T& c) { return c.norm; },
       [](T& c, const std::string&, std::string_view v) { c.norm = trim(v); }},
  };
  return fields;
}

const std::vector<Field<LossWeights>>& loss_fields() {
  using T = LossWeights;
  static const std::vector<Field<T>> fields = {
      {"loss.stage_weights", [](const T& c) { return join(c.stage_weights); },
       [](T& c, const std::string& k, std::string_view v) {
         c.stage_weights = to_list<double>(k, v);
       }},
      SPEG_FIELD_NUM(T, "loss.", lambda_e, to_double),
      SPEG_FIELD_NUM(T, "loss.", lambda_bce, to_double),
      SPEG_FIELD_NUM(T, "loss.", lambda_iou, to_double),
      SPEG_FIELD_NUM(T, "loss.", lambda_b, to_double),
      SPEG_FIELD_NUM(T, "loss.", focal_alpha, to_double),
      SPEG_FIELD_NUM(T, "loss.", focal_gamma, to_double),
      SPEG_FIELD_NUM(T, "loss.", epsilon, to_double),
  };
  return fields;
}

const std::vector<Field<TrainConfig>>& train_fields() {
  using T = TrainConfig;
  static const std::vector<Field<T>> fields = {
      SPEG_FIELD_NUM(T, "train.", epochs, to_int),
      SPEG_FIELD_NUM(T, "train.", batch_size, to_int),
      SPEG_FIELD_NUM(T, "train.", lr_head, to_double),
      SPEG_FIELD_NUM(T, "train.", lr_encoder, to_double),
      SPEG_FIELD_NUM(T, "train.", weight_decay, to_double),
      SPEG_FIELD_NUM(T, "train.", plateau_factor, to_double),
      SPEG_FIELD_NUM(T, "train.", plateau_patience, to_int),
      SPEG_FIELD_NUM(T, "train.", lr_min, to_double),
      SPEG_FIELD_NUM(T, "train.", grad_clip_norm, to_double),
      SPEG_FIELD_NUM(T, "train.", seed, to_int),
      SPEG_FIELD_NUM(T, "train.", val_fraction, to_double),
      SPEG_FIELD_NUM(T, "train.", max_steps, to_int),
      {"train.augment_flip", [](const T& c) { return bool_str(c.augment_flip); },
       [](T& c, const std::string& k, std::string_view v) {
         c.augment_flip = to_bool(k, v);
       }},
      SPEG_FIELD_NUM(T, "train.", adam_beta1, to_double),
      SPEG_FIELD_NUM(T, "train.", adam_beta2, to_double),
      SPEG_FIELD_NUM(T, "train.", adam_eps, to_double),
  };
  return fields;
}

const std::vector<Field<SynthConfig>>& synth_fields() {
  using T = SynthConfig;
  static const std::vector<Field<T>> fields = {
      SPEG_FIELD_NUM(T, "synth.", image_size, to_int),
      SPEG_FIELD_NUM(T, "synth.", num_images, to_int),
      SPEG_FIELD_NUM(T, "synth.", objects_min, to_int),
      SPEG_FIELD_NUM(T, "synth.", objects_max, to_int),
      SPEG_FIELD_NUM(T, "synth.", contrast_delta, to_double),
      SPEG_FIELD_NUM(T, "synth.", texture_scale, to_double),
      SPEG_FIELD_NUM(T, "synth.", seed, to_int),
  };
  return fields;
}

#undef SPEG_FIELD_NUM

template <typename T>
KeyValues dump(const T& cfg, const std::vector<Field<T>>& fields) {
  KeyValues kv;
  for (const auto& f : fields) kv[f.key] = f.get(cfg);
  return kv;
}

template <typename T>
void load(const KeyValues& kv, T& cfg, const std::vector<Field<T>>& fields,
          const std::string& prefix) {
  for (const auto& [key, value] : kv) {
    if (key.rfind(prefix, 0) != 0) continue;
    bool found = false;
    for (const auto& f : fields) {
      if (f.key == key) {
        f.set(cfg, key, value);
        found = true;
        break;
      }
    }
    if (!found) throw ConfigError("unknown configuration key " + key);
  }
}

bool is_integer(double v) { return std::abs(v - std::round(v)) < 1e-9; }

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

int NetworkConfig::scaled(int channels) const {
  if (!(channel_scale > 0)) throw ConfigError("channel_scale must be positive");
  const double v = channels / channel_scale;
  if (!is_integer(v) || std::round(v) < 1) {
    throw ConfigError("channel count " + std::to_string(channels) +
                      " / channel_scale " + format_double(channel_scale) +
                      " is not a positive integer");
  }
  return static_cast<int>(std::round(v));
}

std::array<int, 4> NetworkConfig::stage_channels() const {
  return {scaled(base_channels[0]), scaled(base_channels[1]),
          scaled(base_channels[2]), scaled(base_channels[3])};
}

std::array<int, 3> NetworkConfig::decoder_widths() const {
  return {scaled(decoder_channels[0]), scaled(decoder_channels[1]),
          scaled(decoder_channels[2])};
}

std::array<double, 3> NetworkConfig::effective_edge_influence() const {
  if (!enable_edge_guidance) return {0.0, 0.0, 0.0};
  return edge_influence;
}

void NetworkConfig::validate() const {
  for (int i = 0; i < 4; ++i) {
    if (base_channels[i] <= 0) throw ConfigError("base_channels must be positive");
    if (i > 0 && base_channels[i] <= base_channels[i - 1]) {
      throw ConfigError("base_channels must be strictly increasing");
    }
  }
  stage_channels();
  context_width();
  edge_width();
  decoder_widths();
  for (double a : edge_influence) {
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("edge_influence must lie in [0,1]");
  }
  if (decoder_stages != 1 && decoder_stages != 3) {
    throw ConfigError("decoder_stages must be 1 or 3");
  }
  if (input_size <= 0 || input_size % 32 != 0) {
    throw ConfigError("input_size must be a positive multiple of 32, got " +
                      std::to_string(input_size));
  }
  if (easpp_dilations.empty()) throw ConfigError("easpp_dilations is empty");
  for (int d : easpp_dilations) {
    if (d <= 0) throw ConfigError("easpp dilations must be positive");
  }
  if (se_reduction <= 0) throw ConfigError("se_reduction must be positive");
  if (efe_depth <= 0) throw ConfigError("efe_depth must be positive");
  if (!(mask_threshold > 0.0 && mask_threshold < 1.0)) {
    throw ConfigError("mask_threshold must lie in (0,1)");
  }
  for (int d : encoder_depths) {
    if (d < 0) throw ConfigError("encoder_depths must be nonnegative");
  }
  if (flat_depth < 0 || mlp_ratio <= 0) throw ConfigError("invalid flat encoder depth or mlp_ratio");
}

void LossWeights::validate(int decoder_stages) const {
  if (static_cast<int>(stage_weights.size()) != decoder_stages) {
    throw ConfigError("loss.stage_weights has " +
                      std::to_string(stage_weights.size()) +
                      " entries but decoder_stages = " +
                      std::to_string(decoder_stages));
  }
  for (double w : stage_weights) {
    if (!(w >= 0)) throw ConfigError("stage weights must be nonnegative");
  }
  if (!(lambda_e >= 0 && lambda_bce >= 0 && lambda_iou >= 0 && lambda_b >= 0)) {
    throw ConfigError("loss weights must be nonnegative");
  }
  if (!(focal_alpha > 0 && focal_alpha < 1)) throw ConfigError("focal_alpha must lie in (0,1)");
  if (!(focal_gamma >= 0)) throw ConfigError("focal_gamma must be nonnegative");
  if (!(epsilon > 0)) throw ConfigError("epsilon must be positive");
}

void TrainConfig::validate() const {
  if (epochs <= 0 || batch_size <= 0) throw ConfigError("epochs and batch_size must be positive");
  if (!(plateau_factor > 0 && plateau_factor < 1)) {
    throw ConfigError("plateau_factor must lie in (0,1)");
  }
  if (plateau_patience < 0) throw ConfigError("plateau_patience must be nonnegative");
  if (!(lr_min <= lr_encoder && lr_encoder <= lr_head)) {
    throw ConfigError("learning rates must satisfy lr_min <= lr_encoder <= lr_head");
  }
  if (!(grad_clip_norm > 0)) throw ConfigError("grad_clip_norm must be positive");
  if (!(val_fraction >= 0 && val_fraction < 1)) throw ConfigError("val_fraction must lie in [0,1)");
  if (weight_decay < 0 || max_steps < 0) throw ConfigError("invalid weight_decay or max_steps");
}

void SynthConfig::validate() const {
  if (image_size <= 0 || image_size % 32 != 0) {
    throw ConfigError("image_size must be a positive multiple of 32, got " +
                      std::to_string(image_size));
  }
  if (num_images < 0) throw ConfigError("num_images must be nonnegative");
  if (objects_min < 0 || objects_max < objects_min) {
    throw ConfigError("objects_per_image range is invalid");
  }
  if (!(contrast_delta >= 0 && contrast_delta <= 1)) {
    throw ConfigError("contrast_delta must lie in [0,1]");
  }
  if (!(texture_scale > 0)) throw ConfigError("texture_scale must be positive");
}

KeyValues to_kv(const NetworkConfig& cfg) { return dump(cfg, network_fields()); }
KeyValues to_kv(const LossWeights& cfg) { return dump(cfg, loss_fields()); }
KeyValues to_kv(const TrainConfig& cfg) { return dump(cfg, train_fields()); }
KeyValues to_kv(const SynthConfig& cfg) { return dump(cfg, synth_fields()); }

void apply_kv(const KeyValues& kv, NetworkConfig& cfg) {
  load(kv, cfg, network_fields(), "model.");
}
void apply_kv(const KeyValues& kv, LossWeights& cfg) {
  load(kv, cfg, loss_fields(), "loss.");
}
void apply_kv(const KeyValues& kv, TrainConfig& cfg) {
  load(kv, cfg, train_fields(), "train.");
}
void apply_kv(const KeyValues& kv, SynthConfig& cfg) {
  load(kv, cfg, synth_fields(), "synth.");
}

KeyValues parse_kv(std::string_view text) {
  KeyValues kv;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    kv[key] = trim(std::string_view(t).substr(eq + 1));
  }
  return kv;
}

KeyValues read_kv_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_kv(buf.str());
}

std::string format_kv(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

KeyValues merge_kv(const KeyValues& base, const KeyValues& overrides) {
  KeyValues out = base;
  for (const auto& [k, v] : overrides) out[k] = v;
  return out;
}

}  // namespace speg
