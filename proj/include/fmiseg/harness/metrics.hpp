#pragma once

#include <vector>

#include "fmiseg/numerics/tensor.hpp"

namespace fmiseg {

struct SampleMetrics {
  float dice = 0.0f;    // [0,1]
  float miou = 0.0f;    // two-class mean, [0,1]
  float fg_iou = 0.0f;  // [0,1]
};

struct MetricReport {
  float dice_pct = 0.0f;
  float miou_pct = 0.0f;
  float fg_iou_pct = 0.0f;
  std::vector<SampleMetrics> per_sample;
};

namespace metrics_detail {

struct Counts {
  int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline std::vector<Counts> count(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape()) {
    throw ShapeError("metric: prediction " + shape_str(pred.shape()) + " vs ground truth " + shape_str(gt.shape()));
  }
  const int64_t images = pred.dim(0);
  const int64_t n = pred.numel() / images;
  std::vector<Counts> out(static_cast<size_t>(images));
  for (int64_t b = 0; b < images; ++b) {
    Counts& c = out[static_cast<size_t>(b)];
    for (int64_t i = 0; i < n; ++i) {
      const bool p = pred.ptr()[b * n + i] > 0.5f;
      const bool g = gt.ptr()[b * n + i] > 0.5f;
      if (p && g) ++c.tp;
      else if (p) ++c.fp;
      else if (g) ++c.fn;
      else ++c.tn;
    }
  }
  return out;
}

// An empty class (no pixels in prediction or ground truth) scores 1.
inline double ratio_or_one(int64_t num, int64_t den) { return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den); }

}  // namespace metrics_detail

/// Per-image Dice/IoU of binary masks [B,...]; leading axis indexes images.
inline MetricReport evaluate_masks(const Tensor& pred, const Tensor& gt) {
  MetricReport r;
  double dice = 0.0, miou = 0.0, fg = 0.0;
  for (const auto& c : metrics_detail::count(pred, gt)) {
    SampleMetrics s;
    s.dice = static_cast<float>(metrics_detail::ratio_or_one(2 * c.tp, 2 * c.tp + c.fp + c.fn));
    s.fg_iou = static_cast<float>(metrics_detail::ratio_or_one(c.tp, c.tp + c.fp + c.fn));
    const double bg = metrics_detail::ratio_or_one(c.tn, c.tn + c.fp + c.fn);
    s.miou = static_cast<float>(0.5 * (s.fg_iou + bg));
    dice += s.dice;
    miou += s.miou;
    fg += s.fg_iou;
    r.per_sample.push_back(s);
  }
  const auto n = static_cast<double>(r.per_sample.size());
  if (n > 0) {
    r.dice_pct = static_cast<float>(100.0 * dice / n);
    r.miou_pct = static_cast<float>(100.0 * miou / n);
    r.fg_iou_pct = static_cast<float>(100.0 * fg / n);
  }
  return r;
}

/// Mean over images of 2|P and G| / (|P| + |G|) (1 when both empty), times 100.
inline float dice_metric(const Tensor& pred, const Tensor& gt) { return evaluate_masks(pred, gt).dice_pct; }

/// Mean over images of (IoU_fg + IoU_bg) / 2, empty class IoU = 1, times 100.
inline float miou_metric(const Tensor& pred, const Tensor& gt) { return evaluate_masks(pred, gt).miou_pct; }

}  // namespace fmiseg
