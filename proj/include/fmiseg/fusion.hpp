#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fmiseg/attention.hpp"
#include "fmiseg/encoders.hpp"
#include "fmiseg/nn.hpp"

namespace fmiseg {

// ============================================================ FFBI

/// One direction of the exchange: attention from this branch into the other,
/// then a residual layer norm.
struct FfbiDirection {
  MhcaParams attn;
  nn::LayerNorm norm;

  FfbiDirection() = default;
  FfbiDirection(nn::Builder b, int64_t c, int64_t heads) : attn(b.sub("attn"), c, heads), norm(b.sub("norm"), c) {}
};

struct FfbiParams {
  FfbiDirection hf, lf;

  FfbiParams() = default;
  FfbiParams(nn::Builder b, int64_t c4, int64_t heads) : hf(b.sub("hf"), c4, heads), lf(b.sub("lf"), c4, heads) {}

  static int64_t param_count(int64_t c4) { return 2 * (MhcaParams::param_count(c4) + nn::LayerNorm::param_count(c4)); }
};

struct FfbiOutput {
  Tensor hf_hat;  // [B,C4,h,w]
  Tensor lf_hat;  // [B,C4,h,w]
};

/// Bidirectional exchange between the deepest HF and LF features:
///   hf_hat = LN(hf + MHCA(hf, lf, lf)),  lf_hat = LN(lf + MHCA(lf, hf, hf)).
/// Both directions read the original inputs.
inline FfbiOutput ffbi(const Tensor& f_hf4, const Tensor& f_lf4, const FfbiParams& p) {
  if (f_hf4.shape() != f_lf4.shape() || f_hf4.rank() != 4) {
    throw ShapeError("ffbi: HF " + shape_str(f_hf4.shape()) + " and LF " + shape_str(f_lf4.shape()) + " must match");
  }
  const int64_t h = f_hf4.dim(2), w = f_hf4.dim(3);
  const Tensor hf = nn::to_sequence(f_hf4);
  const Tensor lf = nn::to_sequence(f_lf4);
  const Tensor hf_hat = p.hf.norm(ops::add(hf, mhca(hf, lf, lf, {}, p.hf.attn)));
  const Tensor lf_hat = p.lf.norm(ops::add(lf, mhca(lf, hf, hf, {}, p.lf.attn)));
  return {nn::from_sequence(hf_hat, h, w), nn::from_sequence(lf_hat, h, w)};
}

// ============================================================ LFFI

struct LffiParams {
  MhcaParams visual_attn;  // visual queries over text
  MhcaParams text_attn;    // text queries over visual positions
  nn::Linear filter;       // token axis (max_len) -> channels
  nn::Conv2d out_conv;     // 3x3, C -> C
  std::optional<nn::Linear> text_proj;  // only when text width != C
  int64_t max_len = 0;

  LffiParams() = default;
  LffiParams(nn::Builder b, int64_t c, int64_t text_dim, int64_t heads, int64_t max_len_)
      : visual_attn(b.sub("visual_attn"), c, heads),
        text_attn(b.sub("text_attn"), c, heads),
        filter(b.sub("filter"), max_len_, c),
        out_conv(b.sub("out_conv"), c, c, 3, {.stride = 1, .pad = 1}),
        max_len(max_len_) {
    if (text_dim != c) text_proj.emplace(b.sub("text_proj"), text_dim, c);
  }

  static int64_t param_count(int64_t c, int64_t max_len) {
    return 2 * MhcaParams::param_count(c) + nn::Linear::param_count(max_len, c) + nn::Conv2d::param_count(c, c, 3);
  }
};

/// Intermediates of one LFFI call, for inspection.
struct LffiState {
  Tensor f_prime;  // [B,hw,C]
  Tensor t_prime;  // [B,L,C], pad rows zeroed
  Tensor f_m;      // [B,hw,L]
  Tensor filter;   // [B,hw,C]
  Tensor f_out;    // [B,C,h,w]
};

/// Language-guided interaction with the relevance filter:
///   f'  = MHCA(f, t, t)            (pad tokens masked)
///   t'  = MHCA(t, f, f), pad rows zeroed
///   F_M = f' t'^T                  [hw, L]
///   out = Conv3x3(f + f' * sigmoid(Linear_{L->C}(F_M)))
/// Texts shorter than max_len use the leading rows of the filter weight, which
/// is the same as padding them with zero columns of F_M.
inline Tensor lffi(const Tensor& f_branch, const TextFeatures& text, const LffiParams& p, LffiState* state = nullptr) {
  if (f_branch.rank() != 4 || f_branch.dim(1) != p.visual_attn.dim) {
    throw ShapeError("lffi: branch features " + shape_str(f_branch.shape()) + " do not have " +
                     std::to_string(p.visual_attn.dim) + " channels");
  }
  const int64_t batch = f_branch.dim(0), h = f_branch.dim(2), w = f_branch.dim(3);
  const int64_t len = text.len();
  if (text.batch() != batch) throw ShapeError("lffi: text batch differs from visual batch");
  if (len > p.max_len) {
    throw ConfigError("lffi: text length " + std::to_string(len) + " exceeds filter input extent " +
                      std::to_string(p.max_len));
  }
  Tensor t = p.text_proj ? (*p.text_proj)(text.features) : text.features;
  if (t.dim(2) != p.visual_attn.dim) throw ShapeError("lffi: text channels differ from visual channels");

  const Tensor f = nn::to_sequence(f_branch);
  const Tensor f_prime = mhca(f, t, t, text.mask, p.visual_attn);
  Tensor token_gate({batch, len, 1});
  for (size_t i = 0; i < text.mask.size(); ++i) token_gate.data()[i] = text.mask[i] ? 1.0f : 0.0f;
  const Tensor t_prime = ops::mul(mhca(t, f, f, {}, p.text_attn), token_gate);
  const Tensor f_m = ops::bmm(f_prime, t_prime, false, true);
  const Tensor weight = len == p.max_len ? p.filter.weight : ops::narrow(p.filter.weight, 0, 0, len);
  const Tensor gate = ops::sigmoid(ops::linear(f_m, weight, p.filter.bias));
  const Tensor fused = ops::add(f, ops::mul(f_prime, gate));
  Tensor out = p.out_conv(nn::from_sequence(fused, h, w));
  if (state) *state = {f_prime, t_prime, f_m, gate, out};
  return out;
}

}  // namespace fmiseg
