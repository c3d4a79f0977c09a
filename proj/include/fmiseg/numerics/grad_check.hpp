#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fmiseg/numerics/ops.hpp"

namespace fmiseg {

struct GradCheckReport {
  std::string op_name;
  float max_rel_error = 0.0f;
  int probe_count = 0;
  bool passed = false;
  std::string failure;  // non-empty when the check could not run to completion
};

struct GradCheckOptions {
  float eps = 1e-3f;
  float threshold = 1e-3f;
  int probes = 24;
  uint64_t seed = 7;
  // Extra denominator floor as a fraction of the largest analytic gradient
  // magnitude over all input coordinates. 0 keeps the plain 1e-6 floor. Deep
  // f32 graphs need this: finite differences there carry rounding noise of
  // roughly 1e-4 of the gradient scale, which swamps near-zero coordinates.
  float relative_floor = 0.0f;
};

/// Central finite differences against the tape gradient.
///
/// `fn` recomputes the op from the tensors in `inputs` (which it captures by
/// handle) and may return any shape. The scalar loss is a fixed random
/// projection sum(r * fn()); on the numeric side it is accumulated in double
/// over the actual (rounded) step.
/// Relative error per probe is |a - n| / max(|a|, |n|, 1e-6), with the floor
/// optionally raised (see GradCheckOptions::relative_floor).
inline GradCheckReport grad_check(const std::string& name, const std::function<Tensor()>& fn,
                                  std::vector<Tensor> inputs, GradCheckOptions opt = {}) {
  GradCheckReport report;
  report.op_name = name;
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<float> unit(-1.0f, 1.0f);

  Tensor projection;
  try {
    for (auto& t : inputs) {
      t.set_requires_grad(true);
      t.zero_grad();
    }
    Tape tape;
    {
      TapeScope scope(tape);
      Tensor out = fn();
      projection = Tensor(out.shape());
      for (auto& v : projection.data()) v = unit(rng);
      tape.backward(ops::sum(ops::mul(out, projection)));
    }
  } catch (const NumericalError& e) {
    report.failure = e.what();
    return report;
  }

  auto eval_at = [&]() {
    NoGradScope no_grad;
    return fn().to_vector();
  };

  std::vector<std::pair<size_t, int64_t>> coords;
  int64_t total = 0;
  for (const auto& t : inputs) total += t.numel();
  if (total <= opt.probes) {
    for (size_t i = 0; i < inputs.size(); ++i) {
      for (int64_t j = 0; j < inputs[i].numel(); ++j) coords.emplace_back(i, j);
    }
  } else {
    std::uniform_int_distribution<int64_t> pick(0, total - 1);
    for (int p = 0; p < opt.probes; ++p) {
      int64_t flat = pick(rng);
      size_t i = 0;
      while (flat >= inputs[i].numel()) flat -= inputs[i++].numel();
      coords.emplace_back(i, flat);
    }
  }

  float floor = 1e-6f;
  if (opt.relative_floor > 0.0f) {
    float scale = 0.0f;
    for (const auto& t : inputs) {
      for (float g : t.grad_view()) scale = std::max(scale, std::abs(g));
    }
    floor = std::max(floor, opt.relative_floor * scale);
  }

  float worst = 0.0f;
  try {
    for (const auto& [i, j] : coords) {
      Tensor& t = inputs[i];
      const float analytic = t.has_grad() ? t.grad_view()[static_cast<size_t>(j)] : 0.0f;
      if (!std::isfinite(analytic)) throw NumericalError("non-finite analytic gradient");
      float& x = t.data()[static_cast<size_t>(j)];
      const float saved = x;
      const float x_up = saved + opt.eps, x_down = saved - opt.eps;
      x = x_up;
      const auto up = eval_at();
      x = x_down;
      const auto down = eval_at();
      x = saved;
      // Difference outputs pairwise before projecting: outputs that do not
      // depend on x cancel exactly instead of adding rounding noise.
      double acc = 0.0;
      const float* r = projection.ptr();
      for (size_t k = 0; k < up.size(); ++k) acc += (static_cast<double>(up[k]) - down[k]) * r[k];
      const auto numeric = static_cast<float>(acc / (static_cast<double>(x_up) - x_down));
      const float denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  } catch (const NumericalError& e) {
    report.failure = e.what();
    return report;
  }
  report.max_rel_error = worst;
  report.probe_count = static_cast<int>(coords.size());
  report.passed = report.failure.empty() && worst <= opt.threshold;
  return report;
}

}  // namespace fmiseg
