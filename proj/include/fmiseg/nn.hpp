#pragma once

#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fmiseg/numerics/archive.hpp"
#include "fmiseg/numerics/ops.hpp"

// Parameter registry and the small building blocks (linear, conv, layer norm)
// shared by the encoders, fusion blocks, and decoder.

namespace fmiseg::nn {

/// Ordered, named collection of trainable tensors. Registration order is the
/// checkpoint entry order.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    t.set_requires_grad(true);
    index_[name] = entries_.size();
    entries_.emplace_back(name, t);
    return t;
  }

  const NamedTensors& entries() const { return entries_; }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  Tensor get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return entries_[it->second].second;
  }

  int64_t scalar_count() const {
    int64_t n = 0;
    for (const auto& e : entries_) n += e.second.numel();
    return n;
  }

  /// Scalars under names starting with `prefix`.
  int64_t scalar_count(const std::string& prefix) const {
    int64_t n = 0;
    for (const auto& [name, t] : entries_) {
      if (name.rfind(prefix, 0) == 0) n += t.numel();
    }
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
  }

  /// Copies values in by name; every parameter must be present with a matching shape.
  void load(const NamedTensors& values) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : values) by_name[name] = &t;
    for (auto& [name, t] : entries_) {
      auto it = by_name.find(name);
      if (it == by_name.end()) throw DataError("checkpoint is missing parameter " + name);
      if (it->second->shape() != t.shape()) {
        throw DataError("checkpoint shape mismatch for " + name + ": " + shape_str(it->second->shape()) + " vs " +
                        shape_str(t.shape()));
      }
      std::copy(it->second->data().begin(), it->second->data().end(), t.data().begin());
    }
  }

 private:
  NamedTensors entries_;
  std::map<std::string, size_t> index_;
};

/// Creates parameters under a dotted name prefix with the fixed init scheme:
/// truncated normal (std 0.02, cut at 2 std) for weights, zeros for biases and
/// layer-norm beta, ones for gamma.
class Builder {
 public:
  Builder(ParamStore& store, std::mt19937_64& rng, std::string prefix = "")
      : store_(&store), rng_(&rng), prefix_(std::move(prefix)) {}

  Builder sub(const std::string& name) const { return Builder(*store_, *rng_, join(name)); }
  const std::string& prefix() const { return prefix_; }

  Tensor weight(const std::string& name, Shape shape, float std = 0.02f) {
    Tensor t(std::move(shape));
    std::normal_distribution<float> normal(0.0f, std);
    for (auto& v : t.data()) {
      float s;
      do {
        s = normal(*rng_);
      } while (std::abs(s) > 2.0f * std);
      v = s;
    }
    return store_->add(join(name), t);
  }
  Tensor zeros(const std::string& name, Shape shape) { return store_->add(join(name), Tensor::zeros(std::move(shape))); }
  Tensor ones(const std::string& name, Shape shape) { return store_->add(join(name), Tensor::ones(std::move(shape))); }

 private:
  std::string join(const std::string& name) const { return prefix_.empty() ? name : prefix_ + "." + name; }

  ParamStore* store_;
  std::mt19937_64* rng_;
  std::string prefix_;
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  Linear() = default;
  Linear(Builder b, int64_t in, int64_t out) : weight(b.weight("weight", {in, out})), bias(b.zeros("bias", {out})) {}

  Tensor operator()(const Tensor& x) const { return ops::linear(x, weight, bias); }
  static int64_t param_count(int64_t in, int64_t out) { return in * out + out; }
};

struct Conv2d {
  Tensor weight;  // [cout, cin/groups, k, k]
  Tensor bias;    // [cout]
  ops::Conv2dOptions opt;

  Conv2d() = default;
  Conv2d(Builder b, int64_t cin, int64_t cout, int64_t kernel, ops::Conv2dOptions o = {})
      : weight(b.weight("weight", {cout, cin / o.groups, kernel, kernel})), bias(b.zeros("bias", {cout})), opt(o) {}

  Tensor operator()(const Tensor& x) const { return ops::conv2d(x, weight, bias, opt); }
  static int64_t param_count(int64_t cin, int64_t cout, int64_t kernel, int64_t groups = 1) {
    return cout * (cin / groups) * kernel * kernel + cout;
  }
};

struct LayerNorm {
  Tensor gamma, beta;
  float eps = 1e-5f;

  LayerNorm() = default;
  LayerNorm(Builder b, int64_t c) : gamma(b.ones("gamma", {c})), beta(b.zeros("beta", {c})) {}

  Tensor operator()(const Tensor& x) const { return ops::layer_norm(x, gamma, beta, eps); }
  static int64_t param_count(int64_t c) { return 2 * c; }
};

/// [B,C,H,W] -> [B,H*W,C], positions in row-major order.
inline Tensor to_sequence(const Tensor& x) {
  return ops::permute(ops::reshape(x, {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)}), {0, 2, 1});
}

/// [B,H*W,C] -> [B,C,H,W]; inverse of to_sequence.
inline Tensor from_sequence(const Tensor& seq, int64_t h, int64_t w) {
  if (seq.dim(1) != h * w) throw ShapeError("from_sequence: length does not match " + std::to_string(h) + "x" + std::to_string(w));
  return ops::reshape(ops::permute(seq, {0, 2, 1}), {seq.dim(0), seq.dim(2), h, w});
}

}  // namespace fmiseg::nn
