#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fmiseg/numerics/errors.hpp"

namespace fmiseg {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), int64_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major f32 array with an optional gradient buffer.
///
/// Copies share storage (handle semantics), which is what lets the tape refer
/// back to the tensors an op consumed. Use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, float fill = 0.0f) : s_(std::make_shared<Storage>()) {
    for (auto e : shape) {
      if (e <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    }
    s_->data.assign(static_cast<size_t>(shape_numel(shape)), fill);
    s_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<float> values) : Tensor(std::move(shape)) {
    if (values.size() != s_->data.size()) {
      throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                       shape_str(s_->shape));
    }
    s_->data = std::move(values);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0f); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0f); }
  static Tensor full(Shape shape, float v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(float v) { return Tensor(Shape{1}, v); }

  bool defined() const { return s_ != nullptr; }
  const Shape& shape() const { return s_->shape; }
  int64_t rank() const { return static_cast<int64_t>(s_->shape.size()); }
  int64_t dim(int64_t axis) const {
    if (axis < 0) axis += rank();
    return s_->shape.at(static_cast<size_t>(axis));
  }
  int64_t numel() const { return static_cast<int64_t>(s_->data.size()); }

  std::span<float> data() { return s_->data; }
  std::span<const float> data() const { return s_->data; }
  float* ptr() { return s_->data.data(); }
  const float* ptr() const { return s_->data.data(); }
  std::vector<float> to_vector() const { return s_->data; }

  float item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return s_->data[0];
  }

  float at(std::initializer_list<int64_t> idx) const { return s_->data[offset(idx)]; }
  float& at(std::initializer_list<int64_t> idx) { return s_->data[offset(idx)]; }

  bool requires_grad() const { return s_ && s_->requires_grad; }
  const Tensor& set_requires_grad(bool on) const {
    s_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return s_ && !s_->grad.empty(); }
  /// Gradient buffer, allocated (zero-filled) on first access. Handles share
  /// storage, so this is available through const handles too.
  std::span<float> grad() const {
    if (s_->grad.empty()) s_->grad.assign(s_->data.size(), 0.0f);
    return s_->grad;
  }
  std::span<const float> grad_view() const { return s_->grad; }
  Tensor grad_tensor() const {
    Tensor g(shape());
    if (has_grad()) std::copy(s_->grad.begin(), s_->grad.end(), g.ptr());
    return g;
  }
  void zero_grad() const { s_->grad.clear(); }

  Tensor clone() const {
    Tensor t(shape());
    t.s_->data = s_->data;
    return t;
  }

  /// Same storage, same shape metadata object.
  bool is(const Tensor& other) const { return s_ == other.s_; }

 private:
  struct Storage {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;
    bool requires_grad = false;
  };

  size_t offset(std::initializer_list<int64_t> idx) const {
    if (static_cast<int64_t>(idx.size()) != rank()) throw ShapeError("index rank mismatch");
    int64_t off = 0;
    size_t a = 0;
    for (auto i : idx) {
      const int64_t e = s_->shape[a++];
      if (i < 0 || i >= e) throw ShapeError("index out of range");
      off = off * e + i;
    }
    return static_cast<size_t>(off);
  }

  std::shared_ptr<Storage> s_;
};

inline bool all_finite(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

inline void require_finite(const Tensor& t, const char* op) {
  if (!all_finite(t.data())) {
    throw NumericalError(std::string("non-finite value produced by ") + op + " (shape " +
                         shape_str(t.shape()) + ")");
  }
}

}  // namespace fmiseg
