#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "fmiseg/numerics/gemm.hpp"
#include "fmiseg/numerics/tape.hpp"
#include "fmiseg/numerics/tensor.hpp"

// Differentiable primitives. Every op computes its forward value eagerly, checks
// it for non-finite values, and (when recording) appends one backward closure to
// the active tape.

namespace fmiseg::ops {

namespace detail {

inline bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (active_tape() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->defined() && t->requires_grad(); });
}

/// Registers `fn` on the active tape. `fn` runs only if `out` received a gradient.
template <class Fn>
void record(const char* op, Tensor out, std::initializer_list<Tensor> inputs, Fn fn) {
  out.set_requires_grad(true);
  std::vector<Tensor> ins(inputs);
  active_tape()->record([op, out, ins = std::move(ins), fn = std::move(fn)]() mutable {
    if (!out.has_grad()) return;
    fn(out.grad_view());
    for (const auto& t : ins) {
      if (t.defined() && t.requires_grad() && !all_finite(t.grad_view())) {
        throw NumericalError(std::string("non-finite gradient in backward of ") + op);
      }
    }
  });
}

inline int64_t norm_axis(int64_t axis, int64_t rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("axis out of range");
  return axis;
}

inline int64_t prod(const Shape& s, size_t from, size_t to) {
  int64_t p = 1;
  for (size_t i = from; i < to; ++i) p *= s[i];
  return p;
}

// Broadcasting of two operands, numpy rules (right-aligned).
struct Broadcast {
  enum class Kind { same, b_suffix, a_suffix, general };
  Kind kind = Kind::same;
  Shape out;
  std::vector<int64_t> stride_a, stride_b;  // per out axis, 0 where broadcast
  int64_t na = 0, nb = 0;

  Broadcast(const Shape& a, const Shape& b) : na(shape_numel(a)), nb(shape_numel(b)) {
    const size_t r = std::max(a.size(), b.size());
    out.assign(r, 1);
    std::vector<int64_t> ea(r, 1), eb(r, 1);
    for (size_t i = 0; i < a.size(); ++i) ea[r - a.size() + i] = a[i];
    for (size_t i = 0; i < b.size(); ++i) eb[r - b.size() + i] = b[i];
    for (size_t i = 0; i < r; ++i) {
      if (ea[i] != eb[i] && ea[i] != 1 && eb[i] != 1) {
        throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
      }
      out[i] = std::max(ea[i], eb[i]);
    }
    stride_a = strides(ea);
    stride_b = strides(eb);
    if (a == b) {
      kind = Kind::same;
    } else if (is_suffix(b, out) && shape_numel(out) == na) {
      kind = Kind::b_suffix;
    } else if (is_suffix(a, out) && shape_numel(out) == nb) {
      kind = Kind::a_suffix;
    } else {
      kind = Kind::general;
    }
  }

  std::vector<int64_t> strides(const std::vector<int64_t>& e) const {
    std::vector<int64_t> s(e.size(), 0);
    int64_t acc = 1;
    for (size_t i = e.size(); i-- > 0;) {
      s[i] = e[i] == 1 ? 0 : acc;
      acc *= e[i];
    }
    return s;
  }

  static bool is_suffix(const Shape& small, const Shape& big) {
    // small (after dropping leading 1s) equals the trailing axes of big
    size_t lead = 0;
    while (lead < small.size() && small[lead] == 1 && small.size() - lead > 0) ++lead;
    const size_t n = small.size() - lead;
    if (n > big.size()) return false;
    for (size_t i = 0; i < n; ++i) {
      if (small[lead + i] != big[big.size() - n + i]) return false;
    }
    return true;
  }

  /// Calls f(i, ia, ib) for every output element in order.
  template <class F>
  void visit(F&& f) const {
    const int64_t n = shape_numel(out);
    switch (kind) {
      case Kind::same:
        for (int64_t i = 0; i < n; ++i) f(i, i, i);
        return;
      case Kind::b_suffix:
        for (int64_t i = 0; i < n; ++i) f(i, i, i % nb);
        return;
      case Kind::a_suffix:
        for (int64_t i = 0; i < n; ++i) f(i, i % na, i);
        return;
      case Kind::general: {
        const size_t r = out.size();
        std::vector<int64_t> idx(r, 0);
        int64_t ia = 0, ib = 0;
        for (int64_t i = 0; i < n; ++i) {
          f(i, ia, ib);
          for (size_t d = r; d-- > 0;) {
            ++idx[d];
            ia += stride_a[d];
            ib += stride_b[d];
            if (idx[d] < out[d]) break;
            ia -= stride_a[d] * out[d];
            ib -= stride_b[d] * out[d];
            idx[d] = 0;
          }
        }
        return;
      }
    }
  }
};

enum class BinOp { add, sub, mul, div };

inline Tensor binary(const Tensor& a, const Tensor& b, BinOp kind, const char* name) {
  const Broadcast bc(a.shape(), b.shape());
  Tensor out(bc.out);
  float* o = out.ptr();
  const float* pa = a.ptr();
  const float* pb = b.ptr();
  switch (kind) {
    case BinOp::add: bc.visit([&](int64_t i, int64_t ia, int64_t ib) { o[i] = pa[ia] + pb[ib]; }); break;
    case BinOp::sub: bc.visit([&](int64_t i, int64_t ia, int64_t ib) { o[i] = pa[ia] - pb[ib]; }); break;
    case BinOp::mul: bc.visit([&](int64_t i, int64_t ia, int64_t ib) { o[i] = pa[ia] * pb[ib]; }); break;
    case BinOp::div: bc.visit([&](int64_t i, int64_t ia, int64_t ib) { o[i] = pa[ia] / pb[ib]; }); break;
  }
  require_finite(out, name);
  if (tracking({&a, &b})) {
    record(name, out, {a, b}, [a, b, bc, kind](std::span<const float> g) mutable {
      const bool need_a = a.requires_grad(), need_b = b.requires_grad();
      float* ga = need_a ? a.grad().data() : nullptr;
      float* gb = need_b ? b.grad().data() : nullptr;
      const float* pa = a.ptr();
      const float* pb = b.ptr();
      const float* pg = g.data();
      switch (kind) {
        case BinOp::add:
          bc.visit([&](int64_t i, int64_t ia, int64_t ib) {
            if (ga) ga[ia] += pg[i];
            if (gb) gb[ib] += pg[i];
          });
          break;
        case BinOp::sub:
          bc.visit([&](int64_t i, int64_t ia, int64_t ib) {
            if (ga) ga[ia] += pg[i];
            if (gb) gb[ib] -= pg[i];
          });
          break;
        case BinOp::mul:
          bc.visit([&](int64_t i, int64_t ia, int64_t ib) {
            if (ga) ga[ia] += pg[i] * pb[ib];
            if (gb) gb[ib] += pg[i] * pa[ia];
          });
          break;
        case BinOp::div:
          bc.visit([&](int64_t i, int64_t ia, int64_t ib) {
            if (ga) ga[ia] += pg[i] / pb[ib];
            if (gb) gb[ib] -= pg[i] * pa[ia] / (pb[ib] * pb[ib]);
          });
          break;
      }
    });
  }
  return out;
}

// Shared core for matmul / bmm: out[t] = op(A[t]) * op(B[t]).
inline Tensor batched_gemm(const Tensor& a, const Tensor& b, int64_t batch, int64_t m, int64_t n, int64_t k,
                           bool ta, bool tb, Shape out_shape, const char* name) {
  Tensor out(std::move(out_shape));
  const int64_t sa = m * k, sb = k * n, so = m * n;
  for (int64_t t = 0; t < batch; ++t) {
    kernels::gemm(ta, tb, m, n, k, a.ptr() + t * sa, b.ptr() + t * sb, out.ptr() + t * so, false);
  }
  require_finite(out, name);
  if (tracking({&a, &b})) {
    record(name, out, {a, b}, [a, b, batch, m, n, k, ta, tb, sa, sb, so](std::span<const float> g) mutable {
      const float* pg = g.data();
      if (a.requires_grad()) {
        float* ga = a.grad().data();
        for (int64_t t = 0; t < batch; ++t) {
          const float* bt = b.ptr() + t * sb;
          const float* gt = pg + t * so;
          float* gat = ga + t * sa;
          if (!ta) {
            kernels::gemm(false, !tb, m, k, n, gt, bt, gat, true);
          } else {
            kernels::gemm(tb, true, k, m, n, bt, gt, gat, true);
          }
        }
      }
      if (b.requires_grad()) {
        float* gb = b.grad().data();
        for (int64_t t = 0; t < batch; ++t) {
          const float* at = a.ptr() + t * sa;
          const float* gt = pg + t * so;
          float* gbt = gb + t * sb;
          if (!tb) {
            kernels::gemm(!ta, false, k, n, m, at, gt, gbt, true);
          } else {
            kernels::gemm(true, ta, n, k, m, gt, at, gbt, true);
          }
        }
      }
    });
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinOp::add, "add"); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinOp::sub, "sub"); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinOp::mul, "mul"); }
inline Tensor div(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinOp::div, "div"); }

/// y = x * scale + shift
inline Tensor affine_scalar(const Tensor& x, float scale, float shift) {
  Tensor out(x.shape());
  const float* px = x.ptr();
  float* po = out.ptr();
  for (int64_t i = 0; i < x.numel(); ++i) po[i] = px[i] * scale + shift;
  require_finite(out, "affine_scalar");
  if (detail::tracking({&x})) {
    detail::record("affine_scalar", out, {x}, [x, scale](std::span<const float> g) mutable {
      auto gx = x.grad();
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * scale;
    });
  }
  return out;
}

inline Tensor mul_scalar(const Tensor& x, float s) { return affine_scalar(x, s, 0.0f); }
inline Tensor add_scalar(const Tensor& x, float s) { return affine_scalar(x, 1.0f, s); }

inline Tensor sigmoid(const Tensor& x) {
  Tensor out(x.shape());
  const float* px = x.ptr();
  float* po = out.ptr();
  for (int64_t i = 0; i < x.numel(); ++i) {
    const float v = px[i];
    // split on sign so exp never overflows
    if (v >= 0) {
      po[i] = 1.0f / (1.0f + std::exp(-v));
    } else {
      const float e = std::exp(v);
      po[i] = e / (1.0f + e);
    }
  }
  require_finite(out, "sigmoid");
  if (detail::tracking({&x})) {
    detail::record("sigmoid", out, {x}, [x, out](std::span<const float> g) mutable {
      auto gx = x.grad();
      const float* y = out.ptr();
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0f - y[i]);
    });
  }
  return out;
}

/// Exact (erf) GELU.
inline Tensor gelu(const Tensor& x) {
  Tensor out(x.shape());
  const float* px = x.ptr();
  float* po = out.ptr();
  constexpr float inv_sqrt2 = 0.70710678118654752f;
  for (int64_t i = 0; i < x.numel(); ++i) po[i] = 0.5f * px[i] * (1.0f + std::erf(px[i] * inv_sqrt2));
  require_finite(out, "gelu");
  if (detail::tracking({&x})) {
    detail::record("gelu", out, {x}, [x](std::span<const float> g) mutable {
      auto gx = x.grad();
      const float* px = x.ptr();
      constexpr float inv_sqrt2pi = 0.39894228040143268f;
      for (size_t i = 0; i < g.size(); ++i) {
        const float v = px[i];
        const float cdf = 0.5f * (1.0f + std::erf(v * inv_sqrt2));
        const float pdf = inv_sqrt2pi * std::exp(-0.5f * v * v);
        gx[i] += g[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------- shape ops

inline Tensor reshape(const Tensor& x, Shape shape) {
  int64_t infer = -1, known = 1;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw ShapeError("reshape: more than one -1");
      infer = static_cast<int64_t>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0 && known > 0) shape[static_cast<size_t>(infer)] = x.numel() / known;
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Tensor out(std::move(shape), x.to_vector());
  if (detail::tracking({&x})) {
    detail::record("reshape", out, {x}, [x](std::span<const float> g) mutable {
      auto gx = x.grad();
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

/// out.shape[i] = x.shape[perm[i]]
inline Tensor permute(const Tensor& x, const std::vector<int64_t>& perm) {
  const auto r = static_cast<size_t>(x.rank());
  if (perm.size() != r) throw ShapeError("permute: rank mismatch");
  std::vector<bool> seen(r, false);
  Shape out_shape(r);
  for (size_t i = 0; i < r; ++i) {
    const auto p = static_cast<size_t>(perm[i]);
    if (p >= r || seen[p]) throw ShapeError("permute: invalid permutation");
    seen[p] = true;
    out_shape[i] = x.shape()[p];
  }
  // strides of x in out-axis order
  std::vector<int64_t> xs(r), src_stride(r);
  int64_t acc = 1;
  for (size_t i = r; i-- > 0;) {
    xs[i] = acc;
    acc *= x.shape()[i];
  }
  for (size_t i = 0; i < r; ++i) src_stride[i] = xs[static_cast<size_t>(perm[i])];

  // map[i] = source offset of out element i
  const int64_t n = x.numel();
  std::vector<int64_t> map(static_cast<size_t>(n));
  {
    std::vector<int64_t> idx(r, 0);
    int64_t off = 0;
    for (int64_t i = 0; i < n; ++i) {
      map[static_cast<size_t>(i)] = off;
      for (size_t d = r; d-- > 0;) {
        ++idx[d];
        off += src_stride[d];
        if (idx[d] < out_shape[d]) break;
        off -= src_stride[d] * out_shape[d];
        idx[d] = 0;
      }
    }
  }
  Tensor out(out_shape);
  const float* px = x.ptr();
  float* po = out.ptr();
  for (int64_t i = 0; i < n; ++i) po[i] = px[map[static_cast<size_t>(i)]];
  if (detail::tracking({&x})) {
    detail::record("permute", out, {x}, [x, map = std::move(map)](std::span<const float> g) mutable {
      auto gx = x.grad();
      for (size_t i = 0; i < g.size(); ++i) gx[static_cast<size_t>(map[i])] += g[i];
    });
  }
  return out;
}

inline Tensor concat(const std::vector<Tensor>& parts, int64_t axis) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  const int64_t r = parts[0].rank();
  axis = detail::norm_axis(axis, r);
  Shape out_shape = parts[0].shape();
  out_shape[static_cast<size_t>(axis)] = 0;
  for (const auto& p : parts) {
    if (p.rank() != r) throw ShapeError("concat: rank mismatch");
    for (int64_t d = 0; d < r; ++d) {
      if (d != axis && p.dim(d) != parts[0].dim(d)) throw ShapeError("concat: extent mismatch");
    }
    out_shape[static_cast<size_t>(axis)] += p.dim(axis);
  }
  const int64_t outer = detail::prod(out_shape, 0, static_cast<size_t>(axis));
  const int64_t inner = detail::prod(out_shape, static_cast<size_t>(axis) + 1, out_shape.size());
  const int64_t out_row = out_shape[static_cast<size_t>(axis)] * inner;
  Tensor out(out_shape);
  int64_t offset = 0;
  for (const auto& p : parts) {
    const int64_t row = p.dim(axis) * inner;
    for (int64_t o = 0; o < outer; ++o) {
      std::copy_n(p.ptr() + o * row, row, out.ptr() + o * out_row + offset);
    }
    offset += row;
  }
  bool any = false;
  if (active_tape()) {
    for (const auto& p : parts) any = any || p.requires_grad();
  }
  if (any) {
    out.set_requires_grad(true);
    std::vector<Tensor> ins = parts;
    active_tape()->record([out, ins, outer, out_row]() mutable {
      if (!out.has_grad()) return;
      const float* g = out.grad_view().data();
      int64_t offset = 0;
      for (auto& p : ins) {
        const int64_t row = p.numel() / outer;
        if (p.requires_grad()) {
          float* gp = p.grad().data();
          for (int64_t o = 0; o < outer; ++o) {
            for (int64_t j = 0; j < row; ++j) gp[o * row + j] += g[o * out_row + offset + j];
          }
        }
        offset += row;
      }
    });
  }
  return out;
}

/// Slice [start, start+len) along `axis`.
inline Tensor narrow(const Tensor& x, int64_t axis, int64_t start, int64_t len) {
  axis = detail::norm_axis(axis, x.rank());
  if (start < 0 || len <= 0 || start + len > x.dim(axis)) throw ShapeError("narrow out of range");
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(axis)] = len;
  const int64_t outer = detail::prod(x.shape(), 0, static_cast<size_t>(axis));
  const int64_t inner = detail::prod(x.shape(), static_cast<size_t>(axis) + 1, x.shape().size());
  const int64_t in_row = x.dim(axis) * inner, out_row = len * inner, off = start * inner;
  Tensor out(out_shape);
  for (int64_t o = 0; o < outer; ++o) std::copy_n(x.ptr() + o * in_row + off, out_row, out.ptr() + o * out_row);
  if (detail::tracking({&x})) {
    detail::record("narrow", out, {x}, [x, outer, in_row, out_row, off](std::span<const float> g) mutable {
      float* gx = x.grad().data();
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t j = 0; j < out_row; ++j) gx[o * in_row + off + j] += g[static_cast<size_t>(o * out_row + j)];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------- reductions

inline Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  require_finite(out, "sum");
  if (detail::tracking({&x})) {
    detail::record("sum", out, {x}, [x](std::span<const float> g) mutable {
      for (auto& v : x.grad()) v += g[0];
    });
  }
  return out;
}

inline Tensor mean(const Tensor& x) { return mul_scalar(sum(x), 1.0f / static_cast<float>(x.numel())); }

/// Sum over one axis; the axis is removed (rank-1 results keep shape [1]).
inline Tensor sum_axis(const Tensor& x, int64_t axis) {
  axis = detail::norm_axis(axis, x.rank());
  const int64_t outer = detail::prod(x.shape(), 0, static_cast<size_t>(axis));
  const int64_t n = x.dim(axis);
  const int64_t inner = detail::prod(x.shape(), static_cast<size_t>(axis) + 1, x.shape().size());
  Shape out_shape;
  for (int64_t d = 0; d < x.rank(); ++d) {
    if (d != axis) out_shape.push_back(x.dim(d));
  }
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor out(out_shape);
  const float* px = x.ptr();
  float* po = out.ptr();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      double acc = 0.0;
      for (int64_t j = 0; j < n; ++j) acc += px[(o * n + j) * inner + i];
      po[o * inner + i] = static_cast<float>(acc);
    }
  }
  require_finite(out, "sum_axis");
  if (detail::tracking({&x})) {
    detail::record("sum_axis", out, {x}, [x, outer, n, inner](std::span<const float> g) mutable {
      float* gx = x.grad().data();
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t j = 0; j < n; ++j) {
          for (int64_t i = 0; i < inner; ++i) gx[(o * n + j) * inner + i] += g[static_cast<size_t>(o * inner + i)];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------- softmax

/// Max-subtracted softmax along `axis`.
inline Tensor softmax(const Tensor& x, int64_t axis) {
  require_finite(x, "softmax input");
  axis = detail::norm_axis(axis, x.rank());
  const int64_t outer = detail::prod(x.shape(), 0, static_cast<size_t>(axis));
  const int64_t n = x.dim(axis);
  const int64_t inner = detail::prod(x.shape(), static_cast<size_t>(axis) + 1, x.shape().size());
  Tensor out(x.shape());
  const float* px = x.ptr();
  float* po = out.ptr();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      const int64_t base = o * n * inner + i;
      float mx = -std::numeric_limits<float>::infinity();
      for (int64_t j = 0; j < n; ++j) mx = std::max(mx, px[base + j * inner]);
      double denom = 0.0;
      for (int64_t j = 0; j < n; ++j) {
        const float e = std::exp(px[base + j * inner] - mx);
        po[base + j * inner] = e;
        denom += e;
      }
      const float inv = static_cast<float>(1.0 / denom);
      for (int64_t j = 0; j < n; ++j) po[base + j * inner] *= inv;
    }
  }
  require_finite(out, "softmax");
  if (detail::tracking({&x})) {
    detail::record("softmax", out, {x}, [x, out, outer, n, inner](std::span<const float> g) mutable {
      float* gx = x.grad().data();
      const float* y = out.ptr();
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t i = 0; i < inner; ++i) {
          const int64_t base = o * n * inner + i;
          double dot = 0.0;
          for (int64_t j = 0; j < n; ++j) dot += g[static_cast<size_t>(base + j * inner)] * y[base + j * inner];
          for (int64_t j = 0; j < n; ++j) {
            const int64_t k = base + j * inner;
            gx[k] += y[k] * (g[static_cast<size_t>(k)] - static_cast<float>(dot));
          }
        }
      }
    });
  }
  return out;
}

/// Softmax over the last axis where masked-out keys get exactly zero weight
/// (the -inf logit convention). `key_mask` is [batch, n_keys], true = keep;
/// leading index t of x belongs to batch t / (x.dim(0) / batch). A row whose
/// keys are all masked produces all-zero weights.
inline Tensor masked_softmax(const Tensor& x, const std::vector<uint8_t>& key_mask, int64_t batch) {
  require_finite(x, "masked_softmax input");
  const int64_t n = x.dim(-1);
  const int64_t rows = x.numel() / n;
  if (batch <= 0 || x.dim(0) % batch != 0 || static_cast<int64_t>(key_mask.size()) != batch * n) {
    throw ShapeError("masked_softmax: mask " + std::to_string(key_mask.size()) + " incompatible with " +
                     shape_str(x.shape()));
  }
  const int64_t rows_per_lead = rows / x.dim(0);
  const int64_t lead_per_batch = x.dim(0) / batch;
  Tensor out(x.shape());
  const float* px = x.ptr();
  float* po = out.ptr();
  for (int64_t r = 0; r < rows; ++r) {
    const uint8_t* m = key_mask.data() + (r / rows_per_lead / lead_per_batch) * n;
    const float* xr = px + r * n;
    float* yr = po + r * n;
    float mx = -std::numeric_limits<float>::infinity();
    for (int64_t j = 0; j < n; ++j) {
      if (m[j]) mx = std::max(mx, xr[j]);
    }
    double denom = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      yr[j] = m[j] ? std::exp(xr[j] - mx) : 0.0f;
      denom += yr[j];
    }
    const float inv = denom > 0.0 ? static_cast<float>(1.0 / denom) : 0.0f;
    for (int64_t j = 0; j < n; ++j) yr[j] *= inv;
  }
  require_finite(out, "masked_softmax");
  if (detail::tracking({&x})) {
    detail::record("masked_softmax", out, {x}, [x, out, rows, n](std::span<const float> g) mutable {
      float* gx = x.grad().data();
      const float* y = out.ptr();
      for (int64_t r = 0; r < rows; ++r) {
        const float* yr = y + r * n;
        const float* gr = g.data() + r * n;
        double dot = 0.0;
        for (int64_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
        for (int64_t j = 0; j < n; ++j) gx[r * n + j] += yr[j] * (gr[j] - static_cast<float>(dot));
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------- normalization

/// Normalizes each last-axis slice with population variance, then scales by
/// gamma and shifts by beta.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f) {
  const int64_t c = x.dim(-1);
  if (gamma.numel() != c || beta.numel() != c) {
    throw ShapeError("layer_norm: gamma/beta must have " + std::to_string(c) + " entries");
  }
  if (!(eps > 0.0f)) throw ConfigError("layer_norm: eps must be positive");
  const int64_t rows = x.numel() / c;
  Tensor out(x.shape());
  std::vector<float> xhat(static_cast<size_t>(x.numel()));
  std::vector<float> rstd(static_cast<size_t>(rows));
  const float* px = x.ptr();
  const float* pg = gamma.ptr();
  const float* pb = beta.ptr();
  float* po = out.ptr();
  for (int64_t r = 0; r < rows; ++r) {
    const float* xr = px + r * c;
    double m = 0.0;
    for (int64_t j = 0; j < c; ++j) m += xr[j];
    m /= static_cast<double>(c);
    double v = 0.0;
    for (int64_t j = 0; j < c; ++j) v += (xr[j] - m) * (xr[j] - m);
    v /= static_cast<double>(c);
    const float rs = static_cast<float>(1.0 / std::sqrt(v + eps));
    rstd[static_cast<size_t>(r)] = rs;
    for (int64_t j = 0; j < c; ++j) {
      const float h = static_cast<float>(xr[j] - m) * rs;
      xhat[static_cast<size_t>(r * c + j)] = h;
      po[r * c + j] = h * pg[j] + pb[j];
    }
  }
  require_finite(out, "layer_norm");
  if (detail::tracking({&x, &gamma, &beta})) {
    detail::record("layer_norm", out, {x, gamma, beta},
                   [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd), rows, c](
                       std::span<const float> g) mutable {
                     const float* pg = gamma.ptr();
                     float* gx = x.requires_grad() ? x.grad().data() : nullptr;
                     float* ggamma = gamma.requires_grad() ? gamma.grad().data() : nullptr;
                     float* gbeta = beta.requires_grad() ? beta.grad().data() : nullptr;
                     std::vector<float> dxhat(static_cast<size_t>(c));
                     for (int64_t r = 0; r < rows; ++r) {
                       const float* gr = g.data() + r * c;
                       const float* hr = xhat.data() + r * c;
                       double s1 = 0.0, s2 = 0.0;
                       for (int64_t j = 0; j < c; ++j) {
                         dxhat[static_cast<size_t>(j)] = gr[j] * pg[j];
                         s1 += dxhat[static_cast<size_t>(j)];
                         s2 += dxhat[static_cast<size_t>(j)] * hr[j];
                         if (ggamma) ggamma[j] += gr[j] * hr[j];
                         if (gbeta) gbeta[j] += gr[j];
                       }
                       if (gx) {
                         const float m1 = static_cast<float>(s1 / static_cast<double>(c));
                         const float m2 = static_cast<float>(s2 / static_cast<double>(c));
                         const float rs = rstd[static_cast<size_t>(r)];
                         for (int64_t j = 0; j < c; ++j) {
                           gx[r * c + j] += rs * (dxhat[static_cast<size_t>(j)] - m1 - hr[j] * m2);
                         }
                       }
                     }
                   });
  }
  return out;
}

// ---------------------------------------------------------------- linear algebra

/// [M,K] x [K,N] -> [M,N]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  return detail::batched_gemm(a, b, 1, a.dim(0), b.dim(1), a.dim(1), false, false, {a.dim(0), b.dim(1)}, "matmul");
}

/// Batched product over rank-3 tensors: out[t] = op(a[t]) * op(b[t]).
inline Tensor bmm(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) {
    throw ShapeError("bmm " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const int64_t m = trans_a ? a.dim(2) : a.dim(1);
  const int64_t k = trans_a ? a.dim(1) : a.dim(2);
  const int64_t kb = trans_b ? b.dim(2) : b.dim(1);
  const int64_t n = trans_b ? b.dim(1) : b.dim(2);
  if (k != kb) throw ShapeError("bmm inner extent mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  return detail::batched_gemm(a, b, a.dim(0), m, n, k, trans_a, trans_b, {a.dim(0), m, n}, "bmm");
}

/// x[..., in] * w[in, out] + bias[out]. `bias` may be undefined.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = Tensor()) {
  const int64_t in = x.dim(-1);
  if (w.rank() != 2 || w.dim(0) != in) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  }
  const int64_t out_f = w.dim(1);
  if (bias.defined() && bias.numel() != out_f) throw ShapeError("linear: bias extent");
  const int64_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_f;
  Tensor out(out_shape);
  kernels::gemm(false, false, rows, out_f, in, x.ptr(), w.ptr(), out.ptr(), false);
  if (bias.defined()) {
    float* po = out.ptr();
    const float* pb = bias.ptr();
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t j = 0; j < out_f; ++j) po[r * out_f + j] += pb[j];
    }
  }
  require_finite(out, "linear");
  if (detail::tracking({&x, &w, &bias})) {
    detail::record("linear", out, {x, w, bias}, [x, w, bias, rows, in, out_f](std::span<const float> g) mutable {
      if (x.requires_grad()) kernels::gemm(false, true, rows, in, out_f, g.data(), w.ptr(), x.grad().data(), true);
      if (w.requires_grad()) kernels::gemm(true, false, in, out_f, rows, x.ptr(), g.data(), w.grad().data(), true);
      if (bias.defined() && bias.requires_grad()) {
        float* gb = bias.grad().data();
        for (int64_t r = 0; r < rows; ++r) {
          for (int64_t j = 0; j < out_f; ++j) gb[j] += g[static_cast<size_t>(r * out_f + j)];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------- convolution

struct Conv2dOptions {
  int64_t stride = 1;
  int64_t pad = 0;
  int64_t groups = 1;
};

namespace detail {

struct ConvGeom {
  int64_t batch, cin, h, w, cout, kh, kw, stride, pad, groups, hout, wout, cin_g, cout_g;
};

inline void im2col(const float* x, const ConvGeom& g, float* cols) {
  // x: [cin_g, h, w] for one (batch, group); cols: [cin_g*kh*kw, hout*wout]
  const int64_t p = g.hout * g.wout;
  for (int64_t c = 0; c < g.cin_g; ++c) {
    for (int64_t ky = 0; ky < g.kh; ++ky) {
      for (int64_t kx = 0; kx < g.kw; ++kx) {
        float* row = cols + ((c * g.kh + ky) * g.kw + kx) * p;
        for (int64_t oy = 0; oy < g.hout; ++oy) {
          const int64_t iy = oy * g.stride - g.pad + ky;
          float* dst = row + oy * g.wout;
          if (iy < 0 || iy >= g.h) {
            std::fill_n(dst, g.wout, 0.0f);
            continue;
          }
          const float* src = x + (c * g.h + iy) * g.w;
          for (int64_t ox = 0; ox < g.wout; ++ox) {
            const int64_t ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

inline void col2im(const float* cols, const ConvGeom& g, float* gx) {
  const int64_t p = g.hout * g.wout;
  for (int64_t c = 0; c < g.cin_g; ++c) {
    for (int64_t ky = 0; ky < g.kh; ++ky) {
      for (int64_t kx = 0; kx < g.kw; ++kx) {
        const float* row = cols + ((c * g.kh + ky) * g.kw + kx) * p;
        for (int64_t oy = 0; oy < g.hout; ++oy) {
          const int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          float* dst = gx + (c * g.h + iy) * g.w;
          for (int64_t ox = 0; ox < g.wout; ++ox) {
            const int64_t ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += row[oy * g.wout + ox];
          }
        }
      }
    }
  }
}

inline bool is_pointwise(const ConvGeom& g) { return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0; }
inline bool is_depthwise(const ConvGeom& g) { return g.groups == g.cin && g.cout == g.cin; }

inline void depthwise_forward(const float* x, const float* w, const float* bias, const ConvGeom& g, float* out) {
  for (int64_t b = 0; b < g.batch; ++b) {
    for (int64_t c = 0; c < g.cin; ++c) {
      const float* xc = x + (b * g.cin + c) * g.h * g.w;
      const float* wc = w + c * g.kh * g.kw;
      float* oc = out + (b * g.cin + c) * g.hout * g.wout;
      const float b0 = bias ? bias[c] : 0.0f;
      for (int64_t oy = 0; oy < g.hout; ++oy) {
        for (int64_t ox = 0; ox < g.wout; ++ox) {
          float acc = b0;
          for (int64_t ky = 0; ky < g.kh; ++ky) {
            const int64_t iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.h) continue;
            for (int64_t kx = 0; kx < g.kw; ++kx) {
              const int64_t ix = ox * g.stride - g.pad + kx;
              if (ix < 0 || ix >= g.w) continue;
              acc += wc[ky * g.kw + kx] * xc[iy * g.w + ix];
            }
          }
          oc[oy * g.wout + ox] = acc;
        }
      }
    }
  }
}

}  // namespace detail

/// Cross-correlation. x [B,Cin,H,W], w [Cout,Cin/groups,kh,kw], bias [Cout]
/// (may be undefined). Output extent floor((H + 2 pad - kh) / stride) + 1.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Conv2dOptions opt = {}) {
  if (x.rank() != 4 || w.rank() != 4) throw ShapeError("conv2d expects rank-4 input and weight");
  detail::ConvGeom g{};
  g.batch = x.dim(0);
  g.cin = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.cout = w.dim(0);
  g.kh = w.dim(2);
  g.kw = w.dim(3);
  g.stride = opt.stride;
  g.pad = opt.pad;
  g.groups = opt.groups;
  if (g.groups <= 0 || g.stride <= 0 || g.pad < 0 || g.cin % g.groups != 0 || g.cout % g.groups != 0) {
    throw ShapeError("conv2d: channels not divisible by groups");
  }
  g.cin_g = g.cin / g.groups;
  g.cout_g = g.cout / g.groups;
  if (w.dim(1) != g.cin_g) {
    throw ShapeError("conv2d: weight " + shape_str(w.shape()) + " incompatible with input " + shape_str(x.shape()));
  }
  if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw) throw ShapeError("conv2d: kernel larger than padded input");
  if (bias.defined() && bias.numel() != g.cout) throw ShapeError("conv2d: bias extent");
  g.hout = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.wout = (g.w + 2 * g.pad - g.kw) / g.stride + 1;

  Tensor out({g.batch, g.cout, g.hout, g.wout});
  const int64_t p = g.hout * g.wout;
  const int64_t kdim = g.cin_g * g.kh * g.kw;
  const float* pb = bias.defined() ? bias.ptr() : nullptr;

  if (detail::is_depthwise(g)) {
    detail::depthwise_forward(x.ptr(), w.ptr(), pb, g, out.ptr());
  } else {
    const bool pointwise = detail::is_pointwise(g);
    std::vector<float> cols(pointwise ? 0 : static_cast<size_t>(kdim * p));
    for (int64_t b = 0; b < g.batch; ++b) {
      for (int64_t gi = 0; gi < g.groups; ++gi) {
        const float* xg = x.ptr() + (b * g.cin + gi * g.cin_g) * g.h * g.w;
        const float* src = xg;
        if (!pointwise) {
          detail::im2col(xg, g, cols.data());
          src = cols.data();
        }
        float* og = out.ptr() + (b * g.cout + gi * g.cout_g) * p;
        kernels::gemm(false, false, g.cout_g, p, kdim, w.ptr() + gi * g.cout_g * kdim, src, og, false);
      }
      if (pb) {
        for (int64_t c = 0; c < g.cout; ++c) {
          float* oc = out.ptr() + (b * g.cout + c) * p;
          for (int64_t i = 0; i < p; ++i) oc[i] += pb[c];
        }
      }
    }
  }
  require_finite(out, "conv2d");

  if (detail::tracking({&x, &w, &bias})) {
    detail::record("conv2d", out, {x, w, bias}, [x, w, bias, g, p, kdim](std::span<const float> gout) mutable {
      const float* go = gout.data();
      if (bias.defined() && bias.requires_grad()) {
        float* gb = bias.grad().data();
        for (int64_t b = 0; b < g.batch; ++b) {
          for (int64_t c = 0; c < g.cout; ++c) {
            double acc = 0.0;
            const float* gc = go + (b * g.cout + c) * p;
            for (int64_t i = 0; i < p; ++i) acc += gc[i];
            gb[c] += static_cast<float>(acc);
          }
        }
      }
      float* gx = x.requires_grad() ? x.grad().data() : nullptr;
      float* gw = w.requires_grad() ? w.grad().data() : nullptr;
      if (detail::is_depthwise(g)) {
        for (int64_t b = 0; b < g.batch; ++b) {
          for (int64_t c = 0; c < g.cin; ++c) {
            const float* xc = x.ptr() + (b * g.cin + c) * g.h * g.w;
            const float* wc = w.ptr() + c * g.kh * g.kw;
            const float* gc = go + (b * g.cin + c) * p;
            float* gxc = gx ? gx + (b * g.cin + c) * g.h * g.w : nullptr;
            float* gwc = gw ? gw + c * g.kh * g.kw : nullptr;
            for (int64_t oy = 0; oy < g.hout; ++oy) {
              for (int64_t ox = 0; ox < g.wout; ++ox) {
                const float gv = gc[oy * g.wout + ox];
                if (gv == 0.0f) continue;
                for (int64_t ky = 0; ky < g.kh; ++ky) {
                  const int64_t iy = oy * g.stride - g.pad + ky;
                  if (iy < 0 || iy >= g.h) continue;
                  for (int64_t kx = 0; kx < g.kw; ++kx) {
                    const int64_t ix = ox * g.stride - g.pad + kx;
                    if (ix < 0 || ix >= g.w) continue;
                    if (gwc) gwc[ky * g.kw + kx] += gv * xc[iy * g.w + ix];
                    if (gxc) gxc[iy * g.w + ix] += gv * wc[ky * g.kw + kx];
                  }
                }
              }
            }
          }
        }
        return;
      }
      const bool pointwise = detail::is_pointwise(g);
      std::vector<float> cols(pointwise ? 0 : static_cast<size_t>(kdim * p));
      std::vector<float> gcols(gx && !pointwise ? static_cast<size_t>(kdim * p) : 0);
      for (int64_t b = 0; b < g.batch; ++b) {
        for (int64_t gi = 0; gi < g.groups; ++gi) {
          const float* xg = x.ptr() + (b * g.cin + gi * g.cin_g) * g.h * g.w;
          const float* gog = go + (b * g.cout + gi * g.cout_g) * p;
          const float* wg = w.ptr() + gi * g.cout_g * kdim;
          if (gw) {
            const float* src = xg;
            if (!pointwise) {
              detail::im2col(xg, g, cols.data());
              src = cols.data();
            }
            kernels::gemm(false, true, g.cout_g, kdim, p, gog, src, gw + gi * g.cout_g * kdim, true);
          }
          if (gx) {
            float* gxg = gx + (b * g.cin + gi * g.cin_g) * g.h * g.w;
            if (pointwise) {
              kernels::gemm(true, false, kdim, p, g.cout_g, wg, gog, gxg, true);
            } else {
              kernels::gemm(true, false, kdim, p, g.cout_g, wg, gog, gcols.data(), false);
              detail::col2im(gcols.data(), g, gxg);
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------- resampling

namespace detail {
struct Interp {
  std::vector<int64_t> i0, i1;
  std::vector<float> frac;
};

/// Half-pixel (align_corners = false) source coordinates for one axis.
inline Interp bilinear_axis(int64_t in, int64_t factor) {
  Interp t;
  const int64_t out = in * factor;
  t.i0.resize(static_cast<size_t>(out));
  t.i1.resize(static_cast<size_t>(out));
  t.frac.resize(static_cast<size_t>(out));
  for (int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
    if (src < 0.0) src = 0.0;
    auto lo = static_cast<int64_t>(std::floor(src));
    lo = std::min(lo, in - 1);
    const int64_t hi = std::min(lo + 1, in - 1);
    t.i0[static_cast<size_t>(o)] = lo;
    t.i1[static_cast<size_t>(o)] = hi;
    t.frac[static_cast<size_t>(o)] = static_cast<float>(src - static_cast<double>(lo));
  }
  return t;
}
}  // namespace detail

/// Bilinear upsampling of [B,C,H,W] by an integer factor, half-pixel sampling
/// (align_corners = false) with edge clamping.
inline Tensor upsample_bilinear(const Tensor& x, int64_t factor) {
  if (x.rank() != 4) throw ShapeError("upsample_bilinear expects [B,C,H,W]");
  if (factor < 2) throw ConfigError("upsample_bilinear: factor must be >= 2");
  const int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t ho = h * factor, wo = w * factor;
  auto ty = detail::bilinear_axis(h, factor);
  auto tx = detail::bilinear_axis(w, factor);
  Tensor out({x.dim(0), x.dim(1), ho, wo});
  const float* px = x.ptr();
  float* po = out.ptr();
  for (int64_t pl = 0; pl < planes; ++pl) {
    const float* src = px + pl * h * w;
    float* dst = po + pl * ho * wo;
    for (int64_t oy = 0; oy < ho; ++oy) {
      const float fy = ty.frac[static_cast<size_t>(oy)];
      const float* r0 = src + ty.i0[static_cast<size_t>(oy)] * w;
      const float* r1 = src + ty.i1[static_cast<size_t>(oy)] * w;
      for (int64_t ox = 0; ox < wo; ++ox) {
        const float fx = tx.frac[static_cast<size_t>(ox)];
        const int64_t x0 = tx.i0[static_cast<size_t>(ox)], x1 = tx.i1[static_cast<size_t>(ox)];
        const float top = r0[x0] + fx * (r0[x1] - r0[x0]);
        const float bot = r1[x0] + fx * (r1[x1] - r1[x0]);
        dst[oy * wo + ox] = top + fy * (bot - top);
      }
    }
  }
  require_finite(out, "upsample_bilinear");
  if (detail::tracking({&x})) {
    detail::record("upsample_bilinear", out, {x},
                   [x, ty = std::move(ty), tx = std::move(tx), planes, h, w, ho, wo](std::span<const float> g) mutable {
                     float* gx = x.grad().data();
                     for (int64_t pl = 0; pl < planes; ++pl) {
                       float* dst = gx + pl * h * w;
                       const float* gs = g.data() + pl * ho * wo;
                       for (int64_t oy = 0; oy < ho; ++oy) {
                         const float fy = ty.frac[static_cast<size_t>(oy)];
                         float* r0 = dst + ty.i0[static_cast<size_t>(oy)] * w;
                         float* r1 = dst + ty.i1[static_cast<size_t>(oy)] * w;
                         for (int64_t ox = 0; ox < wo; ++ox) {
                           const float fx = tx.frac[static_cast<size_t>(ox)];
                           const int64_t x0 = tx.i0[static_cast<size_t>(ox)], x1 = tx.i1[static_cast<size_t>(ox)];
                           const float gv = gs[oy * wo + ox];
                           r0[x0] += gv * (1.0f - fy) * (1.0f - fx);
                           r0[x1] += gv * (1.0f - fy) * fx;
                           r1[x0] += gv * fy * (1.0f - fx);
                           r1[x1] += gv * fy * fx;
                         }
                       }
                     }
                   });
  }
  return out;
}

// ---------------------------------------------------------------- lookup / losses

/// table [V,C], ids with shape id_shape -> [*id_shape, C]
inline Tensor embedding(const Tensor& table, const std::vector<int64_t>& ids, Shape id_shape) {
  if (table.rank() != 2) throw ShapeError("embedding table must be [V,C]");
  if (shape_numel(id_shape) != static_cast<int64_t>(ids.size())) throw ShapeError("embedding: id shape");
  const int64_t v = table.dim(0), c = table.dim(1);
  for (auto id : ids) {
    if (id < 0 || id >= v) throw ConfigError("embedding: token id " + std::to_string(id) + " out of range");
  }
  id_shape.push_back(c);
  Tensor out(id_shape);
  for (size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(table.ptr() + ids[i] * c, c, out.ptr() + static_cast<int64_t>(i) * c);
  }
  if (detail::tracking({&table})) {
    detail::record("embedding", out, {table}, [table, ids, c](std::span<const float> g) mutable {
      float* gt = table.grad().data();
      for (size_t i = 0; i < ids.size(); ++i) {
        for (int64_t j = 0; j < c; ++j) gt[ids[i] * c + j] += g[i * static_cast<size_t>(c) + static_cast<size_t>(j)];
      }
    });
  }
  return out;
}

/// Mean over elements of log(1 + exp(-(2t - 1) z)), evaluated stably.
/// Targets are constants (no gradient).
inline Tensor bce_with_logits(const Tensor& logits, const Tensor& target) {
  if (logits.shape() != target.shape()) throw ShapeError("bce: logits/target shape mismatch");
  require_finite(logits, "bce_with_logits input");
  const int64_t n = logits.numel();
  const float* z = logits.ptr();
  const float* t = target.ptr();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    acc += std::max(z[i], 0.0f) - z[i] * t[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(n)));
  require_finite(out, "bce_with_logits");
  if (detail::tracking({&logits})) {
    detail::record("bce_with_logits", out, {logits}, [logits, target, n](std::span<const float> g) mutable {
      float* gz = logits.grad().data();
      const float* z = logits.ptr();
      const float* t = target.ptr();
      const float scale = g[0] / static_cast<float>(n);
      for (int64_t i = 0; i < n; ++i) {
        const float s = z[i] >= 0 ? 1.0f / (1.0f + std::exp(-z[i])) : std::exp(z[i]) / (1.0f + std::exp(z[i]));
        gz[i] += scale * (s - t[i]);
      }
    });
  }
  return out;
}

}  // namespace fmiseg::ops
