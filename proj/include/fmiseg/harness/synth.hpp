#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "fmiseg/encoders.hpp"
#include "fmiseg/numerics/tensor.hpp"

// Synthetic text-disambiguated segmentation data.
//
// Each image is a grey "lung field" (smooth gradient + ripples + per-pixel
// speckle) with one or two bright elliptical lesions, each fully inside its own
// quadrant. With two lesions one is small and one large, and only one of them
// is in the mask; the caption names its size and quadrant, so the image alone
// does not determine the target.

namespace fmiseg {

struct SampleRecord {
  Tensor image;  // [3,H,W] in [0,1]
  Tensor mask;   // [1,H,W], 0/1
  std::string caption;
  std::string id;
};

struct SynthOptions {
  double two_lesion_prob = 0.5;
};

enum class Quadrant { upper_left, upper_right, lower_left, lower_right };

inline const char* vertical_word(Quadrant q) {
  return (q == Quadrant::upper_left || q == Quadrant::upper_right) ? "upper" : "lower";
}
inline const char* horizontal_word(Quadrant q) {
  return (q == Quadrant::upper_left || q == Quadrant::lower_left) ? "left" : "right";
}

/// Every word the caption grammar can emit.
inline Vocab synth_vocab() {
  return Vocab({"one", "a", "single", "small", "large", "lesion", "infected", "area", "opacity", "in", "the", "located",
                "at", "upper", "lower", "left", "right", "region", "lung", "zone", "of"});
}

namespace synth_detail {

struct Lesion {
  Quadrant quadrant;
  bool large;
  double cy, cx, ry, rx, angle;

  bool contains(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (dx * c + dy * s) / rx;
    const double v = (-dx * s + dy * c) / ry;
    return u * u + v * v <= 1.0;
  }
};

inline Lesion draw_lesion(std::mt19937_64& rng, Quadrant q, bool large, int64_t size) {
  const double scale = static_cast<double>(size) / 64.0;
  std::uniform_real_distribution<double> radius(large ? 8.0 : 4.0, large ? 11.0 : 6.0);
  std::uniform_real_distribution<double> aspect(0.8, 1.2);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  const double r = radius(rng) * scale;
  Lesion l{q, large, 0, 0, r * aspect(rng), r * aspect(rng), angle(rng)};
  // keep the whole ellipse inside its quadrant
  const double half = static_cast<double>(size) / 2.0;
  const double reach = std::max(l.ry, l.rx) + 1.0;
  const double lo = reach, hi = std::max(reach, half - reach);
  std::uniform_real_distribution<double> pos(lo, hi);
  const bool lower = q == Quadrant::lower_left || q == Quadrant::lower_right;
  const bool right = q == Quadrant::upper_right || q == Quadrant::lower_right;
  l.cy = pos(rng) + (lower ? half : 0.0);
  l.cx = pos(rng) + (right ? half : 0.0);
  return l;
}

inline std::string caption_for(const Lesion& l, int template_id) {
  const std::string size = l.large ? "large" : "small";
  const std::string where = std::string(vertical_word(l.quadrant)) + " " + horizontal_word(l.quadrant);
  switch (template_id) {
    case 0: return "one " + size + " lesion in " + where + " region";
    case 1: return "a " + size + " infected area in the " + where + " lung";
    default: return "single " + size + " opacity located at " + where + " zone";
  }
}

}  // namespace synth_detail

/// Deterministic in (seed, index): sample i is identical whatever n is.
inline SampleRecord synth_sample(uint64_t seed, int64_t index, int64_t size, const SynthOptions& opt = {}) {
  if (size <= 0 || size % 32 != 0) throw ConfigError("synthetic image size must be a positive multiple of 32");
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), static_cast<uint32_t>(index),
                    0x5eedu};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const bool two = unit(rng) < opt.two_lesion_prob;
  std::array<Quadrant, 4> quads{Quadrant::upper_left, Quadrant::upper_right, Quadrant::lower_left, Quadrant::lower_right};
  std::shuffle(quads.begin(), quads.end(), rng);
  std::vector<synth_detail::Lesion> lesions;
  if (two) {
    const bool first_large = unit(rng) < 0.5;
    lesions.push_back(synth_detail::draw_lesion(rng, quads[0], first_large, size));
    lesions.push_back(synth_detail::draw_lesion(rng, quads[1], !first_large, size));
  } else {
    lesions.push_back(synth_detail::draw_lesion(rng, quads[0], unit(rng) < 0.5, size));
  }
  const size_t target = two ? static_cast<size_t>(unit(rng) < 0.5 ? 0 : 1) : 0;
  const int template_id = static_cast<int>(unit(rng) * 3.0) % 3;

  // background field
  const double gy = unit(rng) * 2.0 - 1.0, gx = unit(rng) * 2.0 - 1.0;
  const double ripple_f = 1.0 + 2.0 * unit(rng), ripple_p = unit(rng) * 2.0 * std::numbers::pi;
  const double base = 0.3 + 0.1 * unit(rng);
  const double lesion_gain = 0.22 + 0.06 * unit(rng);
  std::uniform_real_distribution<double> speckle(-0.06, 0.06);

  SampleRecord rec;
  rec.image = Tensor({3, size, size});
  rec.mask = Tensor({1, size, size});
  const double inv = 1.0 / static_cast<double>(size);
  for (int64_t y = 0; y < size; ++y) {
    for (int64_t x = 0; x < size; ++x) {
      const double fy = static_cast<double>(y) * inv, fx = static_cast<double>(x) * inv;
      double v = base + 0.12 * (gy * (fy - 0.5) + gx * (fx - 0.5)) +
                 0.05 * std::sin(2.0 * std::numbers::pi * ripple_f * (fx + fy) + ripple_p) + speckle(rng);
      const double py = static_cast<double>(y) + 0.5, px = static_cast<double>(x) + 0.5;
      for (size_t k = 0; k < lesions.size(); ++k) {
        if (lesions[k].contains(py, px)) {
          v += lesion_gain;
          if (k == target) rec.mask.data()[static_cast<size_t>(y * size + x)] = 1.0f;
        }
      }
      const auto pix = static_cast<float>(std::clamp(v, 0.0, 1.0));
      for (int64_t c = 0; c < 3; ++c) rec.image.data()[static_cast<size_t>((c * size + y) * size + x)] = pix;
    }
  }
  rec.caption = synth_detail::caption_for(lesions[target], template_id);
  char id[64];
  std::snprintf(id, sizeof(id), "s%llu_%05lld", static_cast<unsigned long long>(seed), static_cast<long long>(index));
  rec.id = id;
  return rec;
}

inline std::vector<SampleRecord> synth_generate(uint64_t seed, int64_t n, int64_t size, const SynthOptions& opt = {}) {
  std::vector<SampleRecord> out;
  out.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out.push_back(synth_sample(seed, i, size, opt));
  return out;
}

/// Quadrant named by a caption, if it names one.
inline bool caption_quadrant(const std::string& caption, Quadrant& q) {
  const auto words = split_words(caption);
  int v = -1, h = -1;
  for (const auto& w : words) {
    if (w == "upper") v = 0;
    if (w == "lower") v = 1;
    if (w == "left") h = 0;
    if (w == "right") h = 1;
  }
  if (v < 0 || h < 0) return false;
  q = v == 0 ? (h == 0 ? Quadrant::upper_left : Quadrant::upper_right) : (h == 0 ? Quadrant::lower_left : Quadrant::lower_right);
  return true;
}

}  // namespace fmiseg
