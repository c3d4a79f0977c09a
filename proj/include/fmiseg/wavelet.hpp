#pragma once

#include <algorithm>
#include <string>

#include "fmiseg/numerics/ops.hpp"

// Single-level orthonormal 2D Haar transform and the LF/HF image split.
//
// For each 2x2 block [a b; c d]:
//   ll = (a + b + c + d) / 2     approximation
//   hl = (a - b + c - d) / 2     difference across columns
//   lh = (a + b - c - d) / 2     difference across rows
//   hh = (a - b - c + d) / 2     diagonal
//
// The transform is its own inverse up to the block re-arrangement, so
// lf = idwt(ll, 0, 0, 0) and hf = idwt(0, lh, hl, hh) add up to the input exactly
// (in exact arithmetic; within a few ulps in f32).

namespace fmiseg::wavelet {

struct WaveletSubbands {
  Tensor ll, lh, hl, hh;  // each [B,C,H/2,W/2]
};

struct FrequencyPair {
  Tensor lf_image;  // [B,C,H,W]
  Tensor hf_image;  // [B,C,H,W]
};

namespace detail {

// One plane pair at a time; `planes` planes of h x w in, four h/2 x w/2 out.
inline void analysis(const float* x, int64_t planes, int64_t h, int64_t w, float* ll, float* lh, float* hl, float* hh,
                     bool accumulate) {
  const int64_t h2 = h / 2, w2 = w / 2;
  for (int64_t p = 0; p < planes; ++p) {
    const float* src = x + p * h * w;
    for (int64_t i = 0; i < h2; ++i) {
      for (int64_t j = 0; j < w2; ++j) {
        const float a = src[(2 * i) * w + 2 * j];
        const float b = src[(2 * i) * w + 2 * j + 1];
        const float c = src[(2 * i + 1) * w + 2 * j];
        const float d = src[(2 * i + 1) * w + 2 * j + 1];
        const int64_t o = p * h2 * w2 + i * w2 + j;
        const float vll = 0.5f * ((a + b) + (c + d));
        const float vhl = 0.5f * ((a - b) + (c - d));
        const float vlh = 0.5f * ((a + b) - (c + d));
        const float vhh = 0.5f * ((a - b) - (c - d));
        if (accumulate) {
          ll[o] += vll, hl[o] += vhl, lh[o] += vlh, hh[o] += vhh;
        } else {
          ll[o] = vll, hl[o] = vhl, lh[o] = vlh, hh[o] = vhh;
        }
      }
    }
  }
}

// Null subband pointers read as zero.
inline void synthesis(const float* ll, const float* lh, const float* hl, const float* hh, int64_t planes, int64_t h2,
                      int64_t w2, float* out, bool accumulate) {
  const int64_t w = 2 * w2;
  auto at = [](const float* s, int64_t o) { return s ? s[o] : 0.0f; };
  for (int64_t p = 0; p < planes; ++p) {
    float* dst = out + p * 4 * h2 * w2;
    for (int64_t i = 0; i < h2; ++i) {
      for (int64_t j = 0; j < w2; ++j) {
        const int64_t o = p * h2 * w2 + i * w2 + j;
        const float vll = at(ll, o), vlh = at(lh, o), vhl = at(hl, o), vhh = at(hh, o);
        const float v[4] = {0.5f * ((vll + vhl) + (vlh + vhh)), 0.5f * ((vll - vhl) + (vlh - vhh)),
                            0.5f * ((vll + vhl) - (vlh + vhh)), 0.5f * ((vll - vhl) - (vlh - vhh))};
        float* q[4] = {&dst[(2 * i) * w + 2 * j], &dst[(2 * i) * w + 2 * j + 1], &dst[(2 * i + 1) * w + 2 * j],
                       &dst[(2 * i + 1) * w + 2 * j + 1]};
        for (int k = 0; k < 4; ++k) *q[k] = accumulate ? *q[k] + v[k] : v[k];
      }
    }
  }
}

inline const float* grad_or_null(const Tensor& t) { return t.has_grad() ? t.grad_view().data() : nullptr; }

}  // namespace detail

/// The transform is orthonormal, so each direction's backward is the other
/// direction applied to the incoming gradient.
inline WaveletSubbands dwt2_haar(const Tensor& image) {
  if (image.rank() != 4) throw ShapeError("dwt2_haar expects [B,C,H,W], got " + shape_str(image.shape()));
  const int64_t planes = image.dim(0) * image.dim(1), h = image.dim(2), w = image.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("dwt2_haar needs even H and W, got " + std::to_string(h) + "x" + std::to_string(w));
  }
  const Shape sub{image.dim(0), image.dim(1), h / 2, w / 2};
  WaveletSubbands s{Tensor(sub), Tensor(sub), Tensor(sub), Tensor(sub)};
  detail::analysis(image.ptr(), planes, h, w, s.ll.ptr(), s.lh.ptr(), s.hl.ptr(), s.hh.ptr(), false);
  require_finite(s.ll, "dwt2_haar");
  if (ops::detail::tracking({&image})) {
    for (const Tensor* t : {&s.ll, &s.lh, &s.hl, &s.hh}) t->set_requires_grad(true);
    active_tape()->record([image, s, planes, h, w]() {
      if (!s.ll.has_grad() && !s.lh.has_grad() && !s.hl.has_grad() && !s.hh.has_grad()) return;
      detail::synthesis(detail::grad_or_null(s.ll), detail::grad_or_null(s.lh), detail::grad_or_null(s.hl),
                        detail::grad_or_null(s.hh), planes, h / 2, w / 2, image.grad().data(), true);
      if (!all_finite(image.grad_view())) throw NumericalError("non-finite gradient in backward of dwt2_haar");
    });
  }
  return s;
}

/// Undefined subbands are treated as zero.
inline Tensor idwt2_haar(const WaveletSubbands& s) {
  const Tensor* ref = nullptr;
  for (const Tensor* t : {&s.ll, &s.lh, &s.hl, &s.hh}) {
    if (!t->defined()) continue;
    if (ref && t->shape() != ref->shape()) throw ShapeError("idwt2_haar: subband shapes differ");
    ref = t;
  }
  if (ref == nullptr || ref->rank() != 4) throw ShapeError("idwt2_haar needs at least one [B,C,h,w] subband");
  const Shape sub = ref->shape();
  const int64_t planes = sub[0] * sub[1], h2 = sub[2], w2 = sub[3];
  auto ptr = [](const Tensor& t) { return t.defined() ? t.ptr() : nullptr; };
  Tensor out({sub[0], sub[1], 2 * h2, 2 * w2});
  detail::synthesis(ptr(s.ll), ptr(s.lh), ptr(s.hl), ptr(s.hh), planes, h2, w2, out.ptr(), false);
  require_finite(out, "idwt2_haar");
  if (ops::detail::tracking({&s.ll, &s.lh, &s.hl, &s.hh})) {
    ops::detail::record("idwt2_haar", out, {s.ll, s.lh, s.hl, s.hh}, [s, planes, h2, w2](std::span<const float> g) {
      const int64_t n = planes * h2 * w2;
      std::vector<float> scratch(static_cast<size_t>(4 * n), 0.0f);
      detail::analysis(g.data(), planes, 2 * h2, 2 * w2, scratch.data(), scratch.data() + n, scratch.data() + 2 * n,
                       scratch.data() + 3 * n, false);
      const Tensor* bands[4] = {&s.ll, &s.lh, &s.hl, &s.hh};
      for (int k = 0; k < 4; ++k) {
        if (!bands[k]->defined() || !bands[k]->requires_grad()) continue;
        auto gb = bands[k]->grad();
        for (int64_t i = 0; i < n; ++i) gb[static_cast<size_t>(i)] += scratch[static_cast<size_t>(k * n + i)];
      }
    });
  }
  return out;
}

inline FrequencyPair frequency_decompose(const Tensor& image) {
  const WaveletSubbands s = dwt2_haar(image);
  FrequencyPair pair;
  pair.lf_image = idwt2_haar({s.ll, Tensor(), Tensor(), Tensor()});
  pair.hf_image = idwt2_haar({Tensor(), s.lh, s.hl, s.hh});
  return pair;
}

/// Per-(sample, channel) min-max rescale to [0,1]. Off by default; it breaks the
/// lf + hf == image identity. Not recorded on the tape: images are data.
inline Tensor minmax_rescale(const Tensor& x) {
  Tensor out = x.clone();
  const int64_t planes = x.dim(0) * x.dim(1), n = x.dim(2) * x.dim(3);
  for (int64_t p = 0; p < planes; ++p) {
    float* v = out.ptr() + p * n;
    const auto [lo, hi] = std::minmax_element(v, v + n);
    const float a = *lo, range = *hi - *lo;
    for (int64_t i = 0; i < n; ++i) v[i] = range > 0.0f ? (v[i] - a) / range : 0.0f;
  }
  return out;
}

}  // namespace fmiseg::wavelet
