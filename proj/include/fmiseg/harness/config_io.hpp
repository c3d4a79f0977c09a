#pragma once

#include <array>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fmiseg/segmodel.hpp"

// Flat key = value configuration text. '#' starts a comment; blank lines are
// ignored. Keys:
//
//   preset        toy | full | tiny   (model and training preset, applied
//                 before any other key)
//   image_size, in_channels, hidden, heads, lffi_layers, vocab_size, max_len,
//   text_layers   integers
//   channels, depths   four comma-separated integers
//   branch_mode   raw_only | hf_only | lf_only | concat | ffbi
//   text_enabled  true | false
//   freq_norm     none | minmax
//   lr0, lr_min, weight_decay, beta1, beta2, eps   floats
//   batch_size, steps, eval_every, seed            integers

namespace fmiseg {

struct TrainConfig {
  float lr0 = 3e-4f;
  float lr_min = 1e-6f;
  int64_t batch_size = 4;
  int64_t steps = 1500;
  float weight_decay = 0.01f;
  uint64_t seed = 0;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  int64_t eval_every = 0;  // 0: evaluate only after the last step

  /// Desk-scale recipe for the toy model; the higher peak rate is what lets
  /// the small from-scratch model converge within a few hundred steps.
  static TrainConfig toy() {
    TrainConfig t;
    t.lr0 = 2e-3f;
    return t;
  }
  static TrainConfig full() {
    TrainConfig t;
    t.batch_size = 32;
    return t;
  }
  static TrainConfig tiny() {
    TrainConfig t = toy();
    t.batch_size = 2;
    t.steps = 50;
    return t;
  }

  void validate() const {
    if (!(lr0 > 0.0f) || !(lr_min > 0.0f) || !(lr_min < lr0)) throw ConfigError("need 0 < lr_min < lr0");
    if (batch_size < 1 || steps < 0 || eval_every < 0) throw ConfigError("batch_size, steps, eval_every out of range");
    if (weight_decay < 0.0f || !(beta1 > 0.0f && beta1 < 1.0f) || !(beta2 > 0.0f && beta2 < 1.0f) || !(eps > 0.0f)) {
      throw ConfigError("bad optimizer hyperparameters");
    }
  }
};

using KeyValues = std::vector<std::pair<std::string, std::string>>;

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    for (const auto& [k, v] : kv) {
      if (k == key) throw ConfigError("duplicate key '" + key + "'");
    }
    kv.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return kv;
}

namespace config_detail {

inline int64_t to_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const auto x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' expects an integer, got '" + v + "'");
  }
}

inline float to_float(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const auto x = std::stof(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "' expects true/false, got '" + v + "'");
}

inline std::array<int64_t, 4> to_quad(const std::string& key, const std::string& v) {
  std::array<int64_t, 4> out{};
  std::istringstream in(v);
  std::string item;
  size_t i = 0;
  while (std::getline(in, item, ',')) {
    if (i >= 4) throw ConfigError("key '" + key + "' expects four values");
    out[i++] = to_int(key, trim(item));
  }
  if (i != 4) throw ConfigError("key '" + key + "' expects four values");
  return out;
}

inline std::string quad_str(const std::array<int64_t, 4>& q) {
  return std::to_string(q[0]) + "," + std::to_string(q[1]) + "," + std::to_string(q[2]) + "," + std::to_string(q[3]);
}

inline std::string float_str(float f) {
  std::ostringstream os;
  os.precision(9);
  os << f;
  return os.str();
}

}  // namespace config_detail

/// Applies `kv` on top of the given configs; unknown keys are errors.
inline void apply_config(const KeyValues& kv, ModelConfig& model, TrainConfig& train) {
  using namespace config_detail;
  for (const auto& [k, v] : kv) {
    if (k != "preset") continue;
    if (v == "toy") model = ModelConfig::toy(), train = TrainConfig::toy();
    else if (v == "full") model = ModelConfig::full(), train = TrainConfig::full();
    else if (v == "tiny") model = ModelConfig::tiny(), train = TrainConfig::tiny();
    else throw ConfigError("unknown preset '" + v + "'");
  }
  for (const auto& [k, v] : kv) {
    if (k == "preset") continue;
    else if (k == "image_size") model.image_size = to_int(k, v);
    else if (k == "in_channels") model.in_channels = to_int(k, v);
    else if (k == "channels") model.channels = to_quad(k, v);
    else if (k == "depths") model.depths = to_quad(k, v);
    else if (k == "hidden") model.hidden = to_int(k, v);
    else if (k == "heads") model.heads = to_int(k, v);
    else if (k == "lffi_layers") model.lffi_layers = to_int(k, v);
    else if (k == "branch_mode") model.branch_mode = branch_mode_from_string(v);
    else if (k == "text_enabled") model.text_enabled = to_bool(k, v);
    else if (k == "vocab_size") model.vocab_size = to_int(k, v);
    else if (k == "max_len") model.max_len = to_int(k, v);
    else if (k == "text_layers") model.text_layers = to_int(k, v);
    else if (k == "freq_norm") {
      if (v == "none") model.freq_norm = FreqNorm::none;
      else if (v == "minmax") model.freq_norm = FreqNorm::minmax;
      else throw ConfigError("unknown freq_norm '" + v + "'");
    }
    else if (k == "lr0") train.lr0 = to_float(k, v);
    else if (k == "lr_min") train.lr_min = to_float(k, v);
    else if (k == "batch_size") train.batch_size = to_int(k, v);
    else if (k == "steps") train.steps = to_int(k, v);
    else if (k == "weight_decay") train.weight_decay = to_float(k, v);
    else if (k == "seed") train.seed = static_cast<uint64_t>(to_int(k, v));
    else if (k == "beta1") train.beta1 = to_float(k, v);
    else if (k == "beta2") train.beta2 = to_float(k, v);
    else if (k == "eps") train.eps = to_float(k, v);
    else if (k == "eval_every") train.eval_every = to_int(k, v);
    else throw ConfigError("unknown config key '" + k + "'");
  }
  model.validate();
  train.validate();
}

inline void load_config_file(const std::string& path, ModelConfig& model, TrainConfig& train) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  apply_config(parse_key_values(ss.str()), model, train);
}

inline std::string format_config(const ModelConfig& m, const TrainConfig& t) {
  using namespace config_detail;
  std::ostringstream os;
  os << "image_size = " << m.image_size << '\n'
     << "in_channels = " << m.in_channels << '\n'
     << "channels = " << quad_str(m.channels) << '\n'
     << "depths = " << quad_str(m.depths) << '\n'
     << "hidden = " << m.hidden << '\n'
     << "heads = " << m.heads << '\n'
     << "lffi_layers = " << m.lffi_layers << '\n'
     << "branch_mode = " << to_string(m.branch_mode) << '\n'
     << "text_enabled = " << (m.text_enabled ? "true" : "false") << '\n'
     << "vocab_size = " << m.vocab_size << '\n'
     << "max_len = " << m.max_len << '\n'
     << "text_layers = " << m.text_layers << '\n'
     << "freq_norm = " << (m.freq_norm == FreqNorm::none ? "none" : "minmax") << '\n'
     << "lr0 = " << float_str(t.lr0) << '\n'
     << "lr_min = " << float_str(t.lr_min) << '\n'
     << "batch_size = " << t.batch_size << '\n'
     << "steps = " << t.steps << '\n'
     << "weight_decay = " << float_str(t.weight_decay) << '\n'
     << "seed = " << t.seed << '\n'
     << "beta1 = " << float_str(t.beta1) << '\n'
     << "beta2 = " << float_str(t.beta2) << '\n'
     << "eps = " << float_str(t.eps) << '\n'
     << "eval_every = " << t.eval_every << '\n';
  return os.str();
}

}  // namespace fmiseg
