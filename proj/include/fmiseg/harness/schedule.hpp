#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace fmiseg {

/// Per-step cosine annealing from lr0 (step 0) to lr_min (step == total).
/// Steps past the end stay at lr_min.
inline float cosine_lr(int64_t step, int64_t total, double lr0 = 3e-4, double lr_min = 1e-6) {
  if (total < 1 || step >= total) return static_cast<float>(lr_min);
  if (step <= 0) return static_cast<float>(lr0);
  const double w = 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
  // convex combination: exact at both ends
  return static_cast<float>(lr0 * w + lr_min * (1.0 - w));
}

}  // namespace fmiseg
