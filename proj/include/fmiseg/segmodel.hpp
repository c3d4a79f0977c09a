#pragma once

#include <array>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fmiseg/encoders.hpp"
#include "fmiseg/fusion.hpp"
#include "fmiseg/nn.hpp"
#include "fmiseg/wavelet.hpp"

namespace fmiseg {

enum class BranchMode { raw_only, hf_only, lf_only, concat, ffbi };

inline std::string to_string(BranchMode m) {
  switch (m) {
    case BranchMode::raw_only: return "raw_only";
    case BranchMode::hf_only: return "hf_only";
    case BranchMode::lf_only: return "lf_only";
    case BranchMode::concat: return "concat";
    case BranchMode::ffbi: return "ffbi";
  }
  return "?";
}

inline BranchMode branch_mode_from_string(const std::string& s) {
  for (auto m : {BranchMode::raw_only, BranchMode::hf_only, BranchMode::lf_only, BranchMode::concat, BranchMode::ffbi}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown branch_mode '" + s + "'");
}

inline bool is_dual(BranchMode m) { return m == BranchMode::concat || m == BranchMode::ffbi; }

/// Frequency image post-processing before the encoders.
enum class FreqNorm { none, minmax };

struct ModelConfig {
  int64_t image_size = 64;
  int64_t in_channels = 3;
  std::array<int64_t, 4> channels{16, 32, 64, 96};
  std::array<int64_t, 4> depths{1, 1, 2, 1};
  int64_t hidden = 32;  // decoder width and text width
  int64_t heads = 4;
  int64_t lffi_layers = 4;
  BranchMode branch_mode = BranchMode::ffbi;
  bool text_enabled = true;
  int64_t vocab_size = 64;
  int64_t max_len = 12;
  int64_t text_layers = 2;
  FreqNorm freq_norm = FreqNorm::none;

  static ModelConfig toy() { return {}; }

  /// ConvNeXt-Tiny widths/depths, 224 input, 768 interaction width.
  static ModelConfig full() {
    ModelConfig c;
    c.image_size = 224;
    c.channels = {96, 192, 384, 768};
    c.depths = {3, 3, 9, 3};
    c.hidden = 768;
    c.heads = 8;
    c.max_len = 24;
    return c;
  }

  /// Smallest configuration used for end-to-end gradient checks.
  static ModelConfig tiny() {
    ModelConfig c;
    c.image_size = 32;
    c.channels = {4, 8, 12, 16};
    c.depths = {1, 1, 1, 1};
    c.hidden = 8;
    c.heads = 2;
    c.max_len = 4;
    c.vocab_size = 16;
    c.text_layers = 1;
    return c;
  }

  /// LFFI stages actually built: text off means none.
  int64_t effective_lffi_layers() const { return text_enabled ? lffi_layers : 0; }

  void validate() const {
    if (lffi_layers < 0 || lffi_layers > 4) throw ConfigError("lffi_layers must be in [0,4]");
    if (image_size <= 0 || image_size % 32 != 0) throw ConfigError("image_size must be a positive multiple of 32");
    if (heads <= 0 || hidden % heads != 0) throw ConfigError("hidden dim must be divisible by heads");
    if (is_dual(branch_mode) && channels[3] % heads != 0) throw ConfigError("C4 must be divisible by heads");
    for (auto c : channels) {
      if (c <= 0) throw ConfigError("channels must be positive");
    }
    for (auto d : depths) {
      if (d < 0) throw ConfigError("depths must be non-negative");
    }
    if (vocab_size < 2 || max_len < 1 || text_layers < 0) throw ConfigError("bad text configuration");
  }

  VisionEncoderConfig vision() const { return {in_channels, channels, depths}; }
  TextEncoderConfig text() const { return {vocab_size, hidden, heads, text_layers, max_len}; }
};

struct SegOutput {
  Tensor logits_lf;   // [B,1,H,W]
  Tensor logits_hf;   // [B,1,H,W]
  Tensor fused_prob;  // [B,1,H,W]
};

/// One decoder stage. Stage 0 sits at stride 32 on the fused deepest features
/// (channel align only); stages 1..3 upsample 2x, add the aligned encoder skip,
/// then run LFFI (when built for this stage) or a plain 3x3 conv.
struct DecoderStage {
  bool has_skip = false;
  nn::Conv2d align_prev;
  nn::Conv2d align_skip;
  std::optional<LffiParams> lffi;
  nn::Conv2d conv;

  DecoderStage() = default;
  DecoderStage(nn::Builder b, std::optional<nn::Builder> lffi_b, int64_t prev_c, int64_t skip_c, int64_t c,
               const ModelConfig& cfg)
      : has_skip(skip_c > 0) {
    align_prev = nn::Conv2d(b.sub("align_prev"), prev_c, c, 1);
    if (has_skip) align_skip = nn::Conv2d(b.sub("align_skip"), skip_c, c, 1);
    if (lffi_b) {
      lffi.emplace(*lffi_b, c, cfg.hidden, cfg.heads, cfg.max_len);
    } else {
      conv = nn::Conv2d(b.sub("conv"), c, c, 3, {.stride = 1, .pad = 1});
    }
  }
};

/// prev [B,C,h,w], skip [B,Cs,2h,2w] -> [B,C',2h,2w]. Without a skip the stage
/// does not upsample.
inline Tensor decoder_stage(const Tensor& prev, const Tensor& skip, const TextFeatures* text,
                            const DecoderStage& stage) {
  Tensor x;
  if (stage.has_skip) {
    if (!skip.defined() || skip.dim(2) != 2 * prev.dim(2) || skip.dim(3) != 2 * prev.dim(3)) {
      throw ShapeError("decoder stage: skip " + (skip.defined() ? shape_str(skip.shape()) : std::string("<none>")) +
                       " is not 2x of " + shape_str(prev.shape()));
    }
    x = ops::add(stage.align_prev(ops::upsample_bilinear(prev, 2)), stage.align_skip(skip));
  } else {
    x = stage.align_prev(prev);
  }
  if (stage.lffi) {
    if (text == nullptr) throw ConfigError("decoder stage has LFFI but no text features were given");
    return lffi(x, *text, *stage.lffi);
  }
  return stage.conv(x);
}

class FmiSegModel {
 public:
  struct Branch {
    std::string name;
    VisionEncoder encoder;
    std::array<DecoderStage, 4> stages;
    nn::Conv2d head;
  };

  explicit FmiSegModel(const ModelConfig& cfg, uint64_t seed = 0) : cfg_(cfg) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    nn::Builder root(params_, rng);

    std::vector<std::string> names;
    switch (cfg.branch_mode) {
      case BranchMode::raw_only: names = {"raw"}; break;
      case BranchMode::hf_only: names = {"hf"}; break;
      case BranchMode::lf_only: names = {"lf"}; break;
      default: names = {"lf", "hf"}; break;
    }
    for (const auto& n : names) {
      Branch br;
      br.name = n;
      br.encoder = VisionEncoder(root.sub("enc." + n), cfg.vision());
      branches_.push_back(std::move(br));
    }
    if (cfg.text_enabled) text_.emplace(root.sub("text"), cfg.text());
    if (cfg.branch_mode == BranchMode::ffbi) ffbi_.emplace(root.sub("ffbi"), cfg.channels[3], cfg.heads);
    if (cfg.branch_mode == BranchMode::concat) {
      cat_hf_ = nn::Conv2d(root.sub("cat.hf"), 2 * cfg.channels[3], cfg.channels[3], 1);
      cat_lf_ = nn::Conv2d(root.sub("cat.lf"), 2 * cfg.channels[3], cfg.channels[3], 1);
    }
    const int64_t lffi_n = cfg.effective_lffi_layers();
    for (auto& br : branches_) {
      for (int64_t s = 0; s < 4; ++s) {
        const std::string tag = "stage" + std::to_string(s);
        std::optional<nn::Builder> lffi_b;
        if (s < lffi_n) lffi_b = root.sub("lffi." + br.name + "." + tag);
        const int64_t prev_c = s == 0 ? cfg.channels[3] : cfg.hidden;
        const int64_t skip_c = s == 0 ? 0 : cfg.channels[static_cast<size_t>(3 - s)];
        br.stages[static_cast<size_t>(s)] = DecoderStage(root.sub("dec." + br.name + "." + tag), lffi_b, prev_c, skip_c, cfg.hidden, cfg);
      }
      br.head = nn::Conv2d(root.sub("head." + br.name), cfg.hidden, 1, 1);
    }
  }

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const std::vector<Branch>& branches() const { return branches_; }
  const std::optional<FfbiParams>& ffbi_params() const { return ffbi_; }
  const std::optional<TextEncoder>& text_encoder() const { return text_; }

  /// Encoder inputs for each branch, in branch order.
  std::vector<Tensor> branch_inputs(const Tensor& image) const {
    if (image.rank() != 4 || image.dim(1) != cfg_.in_channels) throw ShapeError("model expects [B,C,H,W] images");
    if (cfg_.branch_mode == BranchMode::raw_only) return {image};
    auto pair = wavelet::frequency_decompose(image);
    if (cfg_.freq_norm == FreqNorm::minmax) {
      pair.lf_image = wavelet::minmax_rescale(pair.lf_image);
      pair.hf_image = wavelet::minmax_rescale(pair.hf_image);
    }
    switch (cfg_.branch_mode) {
      case BranchMode::hf_only: return {pair.hf_image};
      case BranchMode::lf_only: return {pair.lf_image};
      default: return {pair.lf_image, pair.hf_image};
    }
  }

  std::optional<TextFeatures> encode_text(const TokenBatch& tokens) const {
    if (!text_) return std::nullopt;
    return (*text_)(tokens);
  }

  /// Decoder + head for one branch; `deepest` replaces pyramid.f[3].
  Tensor decode_branch(const Branch& br, const FeaturePyramid& pyr, const Tensor& deepest,
                       const TextFeatures* text) const {
    Tensor x = decoder_stage(deepest, Tensor(), text, br.stages[0]);
    for (size_t s = 1; s < 4; ++s) x = decoder_stage(x, pyr.f[3 - s], text, br.stages[s]);
    // 1x1 head at stride 4, then 4x bilinear: equal to upsample-then-head since
    // bilinear weights sum to one and the head is per-pixel affine.
    return ops::upsample_bilinear(br.head(x), 4);
  }

  SegOutput forward(const Tensor& image, const TokenBatch& tokens) const {
    if (image.dim(2) % 32 != 0 || image.dim(3) % 32 != 0) throw ShapeError("image H and W must be divisible by 32");
    const auto inputs = branch_inputs(image);
    const auto text = encode_text(tokens);
    const TextFeatures* tp = text ? &*text : nullptr;

    std::vector<FeaturePyramid> pyr;
    for (size_t i = 0; i < branches_.size(); ++i) pyr.push_back(branches_[i].encoder(inputs[i]));

    SegOutput out;
    if (branches_.size() == 1) {
      out.logits_lf = decode_branch(branches_[0], pyr[0], pyr[0].f[3], tp);
      out.logits_hf = out.logits_lf;
    } else {
      Tensor deep_lf = pyr[0].f[3], deep_hf = pyr[1].f[3];
      if (ffbi_) {
        auto fused = ffbi(deep_hf, deep_lf, *ffbi_);
        deep_hf = fused.hf_hat;
        deep_lf = fused.lf_hat;
      } else {
        const Tensor both = ops::concat({deep_hf, deep_lf}, 1);
        deep_hf = cat_hf_(both);
        deep_lf = cat_lf_(both);
      }
      out.logits_lf = decode_branch(branches_[0], pyr[0], deep_lf, tp);
      out.logits_hf = decode_branch(branches_[1], pyr[1], deep_hf, tp);
    }
    out.fused_prob = ops::sigmoid(ops::mul_scalar(ops::add(out.logits_lf, out.logits_hf), 0.5f));
    return out;
  }

 private:
  ModelConfig cfg_;
  nn::ParamStore params_;
  std::vector<Branch> branches_;
  std::optional<TextEncoder> text_;
  std::optional<FfbiParams> ffbi_;
  nn::Conv2d cat_hf_, cat_lf_;
};

// ============================================================ losses

/// 1 - (2 sum(p t) + 1) / (sum(p) + sum(t) + 1) per sample, averaged over the batch.
inline Tensor dice_loss(const Tensor& prob, const Tensor& target) {
  if (prob.shape() != target.shape()) throw ShapeError("dice_loss: shape mismatch");
  constexpr float eps = 1.0f;
  const int64_t b = prob.dim(0);
  const Tensor p = ops::reshape(prob, {b, -1});
  const Tensor t = ops::reshape(target, {b, -1});
  const Tensor inter = ops::sum_axis(ops::mul(p, t), 1);
  const Tensor num = ops::affine_scalar(inter, 2.0f, eps);
  const Tensor den = ops::add_scalar(ops::add(ops::sum_axis(p, 1), ops::sum_axis(t, 1)), eps);
  return ops::affine_scalar(ops::mean(ops::div(num, den)), -1.0f, 1.0f);
}

inline Tensor bce_loss(const Tensor& logits, const Tensor& target) { return ops::bce_with_logits(logits, target); }

/// Dice + BCE on each head, equal weights.
inline Tensor total_loss(const SegOutput& out, const Tensor& target) {
  auto head = [&](const Tensor& z) { return ops::add(dice_loss(ops::sigmoid(z), target), bce_loss(z, target)); };
  return ops::add(head(out.logits_lf), head(out.logits_hf));
}

/// fused_prob >= 0.5 as a 0/1 tensor.
inline Tensor predict_mask(const SegOutput& out) {
  Tensor m(out.fused_prob.shape());
  for (int64_t i = 0; i < m.numel(); ++i) m.data()[static_cast<size_t>(i)] = out.fused_prob.data()[static_cast<size_t>(i)] >= 0.5f ? 1.0f : 0.0f;
  return m;
}

}  // namespace fmiseg
