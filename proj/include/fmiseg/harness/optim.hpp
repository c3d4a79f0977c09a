#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "fmiseg/nn.hpp"

namespace fmiseg {

struct AdamWOptions {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.01f;
};

/// First and second moments for one parameter tensor.
struct AdamState {
  std::vector<float> m, v;
};

/// One AdamW update of `param` in place. `step` is 1-based (after increment).
/// Decoupled decay first, p -= lr * wd * p, then the bias-corrected Adam step.
inline void adamw_update(std::span<float> param, std::span<const float> grad, AdamState& state, int64_t step, float lr,
                         const AdamWOptions& opt) {
  if (state.m.empty()) {
    state.m.assign(param.size(), 0.0f);
    state.v.assign(param.size(), 0.0f);
  }
  const double bc1 = 1.0 - std::pow(static_cast<double>(opt.beta1), static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(static_cast<double>(opt.beta2), static_cast<double>(step));
  const float decay = 1.0f - lr * opt.weight_decay;
  for (size_t i = 0; i < param.size(); ++i) {
    const float g = grad.empty() ? 0.0f : grad[i];
    float& m = state.m[i];
    float& v = state.v[i];
    m = opt.beta1 * m + (1.0f - opt.beta1) * g;
    v = opt.beta2 * v + (1.0f - opt.beta2) * g * g;
    const auto m_hat = static_cast<float>(m / bc1);
    const auto v_hat = static_cast<float>(v / bc2);
    param[i] = param[i] * decay - lr * m_hat / (std::sqrt(v_hat) + opt.eps);
  }
}

class AdamW {
 public:
  AdamW(nn::ParamStore& params, AdamWOptions opt = {}) : params_(&params), opt_(opt), state_(params.entries().size()) {}

  /// Applies one update to every parameter. Any non-finite gradient aborts the
  /// whole step before a single value is modified.
  void step(float lr) {
    const auto& entries = params_->entries();
    for (const auto& [name, t] : entries) {
      if (t.has_grad() && !all_finite(t.grad_view())) {
        throw NumericalError("adamw: non-finite gradient for parameter " + name);
      }
    }
    ++step_;
    for (size_t i = 0; i < entries.size(); ++i) {
      Tensor t = entries[i].second;
      adamw_update(t.data(), t.grad_view(), state_[i], step_, lr, opt_);
    }
  }

  int64_t step_count() const { return step_; }
  const AdamWOptions& options() const { return opt_; }

 private:
  nn::ParamStore* params_;
  AdamWOptions opt_;
  std::vector<AdamState> state_;
  int64_t step_ = 0;
};

}  // namespace fmiseg
