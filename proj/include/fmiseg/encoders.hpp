#pragma once

#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "fmiseg/attention.hpp"
#include "fmiseg/nn.hpp"

namespace fmiseg {

// ============================================================ vision encoder

/// Stage outputs at strides 4, 8, 16, 32.
struct FeaturePyramid {
  std::array<Tensor, 4> f;
};

struct VisionEncoderConfig {
  int64_t in_channels = 3;
  std::array<int64_t, 4> channels{16, 32, 64, 96};
  std::array<int64_t, 4> depths{1, 1, 2, 1};
};

/// 7x7 depthwise conv -> layer norm over channels -> pointwise 4x expand -> GELU
/// -> pointwise project, added back to the input.
struct ConvNextBlock {
  nn::Conv2d dw;
  nn::LayerNorm norm;
  nn::Linear expand, project;

  ConvNextBlock() = default;
  ConvNextBlock(nn::Builder b, int64_t c)
      : dw(b.sub("dw"), c, c, 7, {.stride = 1, .pad = 3, .groups = c}),
        norm(b.sub("norm"), c),
        expand(b.sub("expand"), c, 4 * c),
        project(b.sub("project"), 4 * c, c) {}

  Tensor operator()(const Tensor& x) const {
    Tensor y = ops::permute(dw(x), {0, 2, 3, 1});  // NHWC
    y = project(ops::gelu(expand(norm(y))));
    return ops::add(x, ops::permute(y, {0, 3, 1, 2}));
  }
};

class VisionEncoder {
 public:
  VisionEncoder() = default;
  VisionEncoder(nn::Builder b, const VisionEncoderConfig& cfg) : cfg_(cfg) {
    stem_ = nn::Conv2d(b.sub("stem"), cfg.in_channels, cfg.channels[0], 4, {.stride = 4});
    for (size_t s = 0; s < 4; ++s) {
      if (s > 0) {
        down_[s] = nn::Conv2d(b.sub("down" + std::to_string(s)), cfg.channels[s - 1], cfg.channels[s], 2, {.stride = 2});
      }
      for (int64_t d = 0; d < cfg.depths[s]; ++d) {
        blocks_[s].emplace_back(b.sub("stage" + std::to_string(s + 1) + ".block" + std::to_string(d)), cfg.channels[s]);
      }
    }
  }

  FeaturePyramid operator()(const Tensor& image) const {
    if (image.rank() != 4 || image.dim(1) != cfg_.in_channels) {
      throw ShapeError("vision encoder expects [B," + std::to_string(cfg_.in_channels) + ",H,W], got " +
                       shape_str(image.shape()));
    }
    if (image.dim(2) % 32 != 0 || image.dim(3) % 32 != 0) {
      throw ShapeError("vision encoder needs H and W divisible by 32, got " + shape_str(image.shape()));
    }
    FeaturePyramid pyr;
    Tensor x = stem_(image);
    for (size_t s = 0; s < 4; ++s) {
      if (s > 0) x = down_[s](x);
      for (const auto& blk : blocks_[s]) x = blk(x);
      pyr.f[s] = x;
    }
    return pyr;
  }

  const VisionEncoderConfig& config() const { return cfg_; }

 private:
  VisionEncoderConfig cfg_;
  nn::Conv2d stem_;
  std::array<nn::Conv2d, 4> down_;
  std::array<std::vector<ConvNextBlock>, 4> blocks_;
};

// ============================================================ text side

/// Token -> id map with reserved ids 0 = pad and 1 = unk.
class Vocab {
 public:
  static constexpr int64_t pad_id = 0;
  static constexpr int64_t unk_id = 1;

  Vocab() : tokens_{"<pad>", "<unk>"} {}

  explicit Vocab(const std::vector<std::string>& words) : Vocab() {
    for (const auto& w : words) add(w);
  }

  int64_t add(const std::string& token) {
    auto it = ids_.find(token);
    if (it != ids_.end()) return it->second;
    const auto id = static_cast<int64_t>(tokens_.size());
    tokens_.push_back(token);
    ids_[token] = id;
    return id;
  }

  int64_t id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? unk_id : it->second;
  }
  bool contains(const std::string& token) const { return ids_.count(token) > 0; }
  const std::string& token(int64_t id) const { return tokens_.at(static_cast<size_t>(id)); }
  int64_t size() const { return static_cast<int64_t>(tokens_.size()); }

  /// One token per line; line i (0-based) gets id i + 2.
  void save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write vocab " + path);
    for (size_t i = 2; i < tokens_.size(); ++i) f << tokens_[i] << '\n';
  }

  static Vocab load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot read vocab " + path);
    Vocab v;
    std::string line;
    while (std::getline(f, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (v.contains(line) || line.empty()) throw DataError("vocab file has empty or duplicate token: '" + line + "'");
      v.add(line);
    }
    return v;
  }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int64_t> ids_;
};

/// Token ids and validity mask for a batch, both [batch * len].
struct TokenBatch {
  std::vector<int64_t> ids;
  std::vector<uint8_t> mask;
  int64_t batch = 0;
  int64_t len = 0;

  void append(const TokenBatch& one) {
    if (batch > 0 && one.len != len) throw ShapeError("token batch length mismatch");
    len = one.len;
    batch += one.batch;
    ids.insert(ids.end(), one.ids.begin(), one.ids.end());
    mask.insert(mask.end(), one.mask.begin(), one.mask.end());
  }
};

/// Lowercases and splits on anything that is not a letter or digit.
inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char ch : text) {
    if (std::isalnum(ch)) {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    } else if (!cur.empty()) {
      words.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

inline TokenBatch tokenize(const std::string& text, const Vocab& vocab, int64_t max_len) {
  TokenBatch t;
  t.batch = 1;
  t.len = max_len;
  t.ids.assign(static_cast<size_t>(max_len), Vocab::pad_id);
  t.mask.assign(static_cast<size_t>(max_len), 0);
  const auto words = split_words(text);
  for (size_t i = 0; i < words.size() && static_cast<int64_t>(i) < max_len; ++i) {
    t.ids[i] = vocab.id(words[i]);
    t.mask[i] = 1;
  }
  return t;
}

struct TextFeatures {
  Tensor features;            // [B,L,C]
  std::vector<uint8_t> mask;  // [B*L], 1 = real token

  int64_t batch() const { return features.dim(0); }
  int64_t len() const { return features.dim(1); }
  int64_t channels() const { return features.dim(2); }
};

/// Imports precomputed word features ("features" [B,L,C] and "mask" [B,L] as
/// 0/1 floats) from an archive.
inline TextFeatures text_features_from_archive(const NamedTensors& entries) {
  TextFeatures tf;
  Tensor mask;
  for (const auto& [name, t] : entries) {
    if (name == "features") tf.features = t;
    if (name == "mask") mask = t;
  }
  if (!tf.features.defined() || !mask.defined() || tf.features.rank() != 3 ||
      mask.numel() != tf.features.dim(0) * tf.features.dim(1)) {
    throw DataError("text feature archive needs 'features' [B,L,C] and 'mask' [B,L]");
  }
  for (float m : mask.data()) tf.mask.push_back(m > 0.5f ? 1 : 0);
  return tf;
}

/// Fixed sinusoidal position table [len, dim].
inline Tensor sinusoidal_positions(int64_t len, int64_t dim) {
  Tensor pe({len, dim});
  for (int64_t pos = 0; pos < len; ++pos) {
    for (int64_t i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      const double a = static_cast<double>(pos) * rate;
      pe.at({pos, i}) = static_cast<float>(i % 2 == 0 ? std::sin(a) : std::cos(a));
    }
  }
  return pe;
}

struct TextEncoderConfig {
  int64_t vocab_size = 64;
  int64_t dim = 32;
  int64_t heads = 4;
  int64_t layers = 2;
  int64_t max_len = 12;
};

/// Post-norm transformer layer: x = LN(x + SelfAttn(x)); x = LN(x + FFN(x)).
struct TextLayer {
  MhcaParams attn;
  nn::LayerNorm norm1, norm2;
  nn::Linear ff1, ff2;

  TextLayer() = default;
  TextLayer(nn::Builder b, int64_t dim, int64_t heads)
      : attn(b.sub("attn"), dim, heads),
        norm1(b.sub("norm1"), dim),
        norm2(b.sub("norm2"), dim),
        ff1(b.sub("ff1"), dim, 4 * dim),
        ff2(b.sub("ff2"), 4 * dim, dim) {}

  Tensor operator()(const Tensor& x, std::span<const uint8_t> mask) const {
    Tensor h = norm1(ops::add(x, mhca(x, x, x, mask, attn)));
    return norm2(ops::add(h, ff2(ops::gelu(ff1(h)))));
  }
};

/// Embedding + sinusoidal positions + self-attention layers, trained from scratch.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(nn::Builder b, const TextEncoderConfig& cfg)
      : cfg_(cfg), embed_(b.weight("embed", {cfg.vocab_size, cfg.dim})), positions_(sinusoidal_positions(cfg.max_len, cfg.dim)) {
    for (int64_t i = 0; i < cfg.layers; ++i) layers_.emplace_back(b.sub("layer" + std::to_string(i)), cfg.dim, cfg.heads);
  }

  TextFeatures operator()(const TokenBatch& tokens) const {
    if (tokens.len < 1 || tokens.len > cfg_.max_len) {
      throw ShapeError("text length " + std::to_string(tokens.len) + " outside [1, " + std::to_string(cfg_.max_len) + "]");
    }
    Tensor x = ops::embedding(embed_, tokens.ids, {tokens.batch, tokens.len});
    const Tensor pos = tokens.len == cfg_.max_len ? positions_ : ops::narrow(positions_, 0, 0, tokens.len);
    x = ops::add(x, pos);
    for (const auto& layer : layers_) x = layer(x, tokens.mask);
    return {x, tokens.mask};
  }

  const TextEncoderConfig& config() const { return cfg_; }

 private:
  TextEncoderConfig cfg_;
  Tensor embed_;
  Tensor positions_;
  std::vector<TextLayer> layers_;
};

}  // namespace fmiseg
