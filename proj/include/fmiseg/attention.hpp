#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "fmiseg/nn.hpp"

namespace fmiseg {

/// Projections for one multi-head (cross-)attention. Weights are [C,C] in
/// x * W orientation.
struct MhcaParams {
  nn::Linear q, k, v, o;
  int64_t dim = 0;
  int64_t heads = 1;

  MhcaParams() = default;
  MhcaParams(nn::Builder b, int64_t dim_, int64_t heads_)
      : q(b.sub("q"), dim_, dim_),
        k(b.sub("k"), dim_, dim_),
        v(b.sub("v"), dim_, dim_),
        o(b.sub("o"), dim_, dim_),
        dim(dim_),
        heads(heads_) {
    if (heads_ <= 0 || dim_ % heads_ != 0) {
      throw ConfigError("attention dim " + std::to_string(dim_) + " not divisible by " + std::to_string(heads_) +
                        " heads");
    }
  }

  static int64_t param_count(int64_t dim) { return 4 * nn::Linear::param_count(dim, dim); }
};

namespace attention_detail {

// [B,N,C] -> [B*h,N,d]
inline Tensor split_heads(const Tensor& x, int64_t heads) {
  const int64_t b = x.dim(0), n = x.dim(1), c = x.dim(2), d = c / heads;
  if (heads == 1) return x;
  return ops::reshape(ops::permute(ops::reshape(x, {b, n, heads, d}), {0, 2, 1, 3}), {b * heads, n, d});
}

// [B*h,N,d] -> [B,N,C]
inline Tensor merge_heads(const Tensor& x, int64_t batch, int64_t heads) {
  if (heads == 1) return x;
  const int64_t n = x.dim(1), d = x.dim(2);
  return ops::reshape(ops::permute(ops::reshape(x, {batch, heads, n, d}), {0, 2, 1, 3}), {batch, n, heads * d});
}

}  // namespace attention_detail

/// Multi-head cross-attention over sequences q [B,Nq,C], k/v [B,Nk,C].
///
/// Per head: softmax(Q K^T / sqrt(C/h) + mask) V, heads concatenated and passed
/// through the output projection. `key_mask` is [B*Nk] with 1 = attend; an
/// empty span means every key is valid.
inline Tensor mhca(const Tensor& q, const Tensor& k, const Tensor& v, std::span<const uint8_t> key_mask,
                   const MhcaParams& p) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) throw ShapeError("mhca expects [B,N,C] inputs");
  if (q.dim(2) != p.dim || k.dim(2) != p.dim || v.dim(2) != p.dim) {
    throw ShapeError("mhca: channel mismatch with attention dim " + std::to_string(p.dim));
  }
  if (k.dim(1) != v.dim(1) || k.dim(0) != q.dim(0) || v.dim(0) != q.dim(0)) {
    throw ShapeError("mhca: key/value length or batch mismatch");
  }
  const int64_t batch = q.dim(0);
  const float scale = 1.0f / std::sqrt(static_cast<float>(p.dim / p.heads));

  const Tensor qh = attention_detail::split_heads(ops::mul_scalar(p.q(q), scale), p.heads);
  const Tensor kh = attention_detail::split_heads(p.k(k), p.heads);
  const Tensor vh = attention_detail::split_heads(p.v(v), p.heads);
  const Tensor logits = ops::bmm(qh, kh, false, true);  // [B*h, Nq, Nk]
  Tensor weights;
  if (key_mask.empty()) {
    weights = ops::softmax(logits, -1);
  } else {
    if (static_cast<int64_t>(key_mask.size()) != batch * k.dim(1)) throw ShapeError("mhca: key mask extent");
    weights = ops::masked_softmax(logits, std::vector<uint8_t>(key_mask.begin(), key_mask.end()), batch);
  }
  const Tensor ctx = attention_detail::merge_heads(ops::bmm(weights, vh), batch, p.heads);
  return p.o(ctx);
}

}  // namespace fmiseg
