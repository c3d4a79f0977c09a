#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "fmiseg/harness/train.hpp"

namespace fmiseg {

enum class AblationSuite { frequency, lffi_layers };

inline AblationSuite ablation_suite_from_string(const std::string& s) {
  if (s == "frequency") return AblationSuite::frequency;
  if (s == "lffi_layers") return AblationSuite::lffi_layers;
  throw ConfigError("unknown ablation suite '" + s + "' (expected frequency or lffi_layers)");
}

struct AblationRow {
  std::string label;
  ModelConfig config;
};

/// Row configs derived from `base`, in table order.
inline std::vector<AblationRow> ablation_rows(AblationSuite suite, const ModelConfig& base) {
  std::vector<AblationRow> rows;
  auto with = [&](const std::string& label, auto&& edit) {
    ModelConfig c = base;
    edit(c);
    rows.push_back({label, c});
  };
  if (suite == AblationSuite::frequency) {
    with("Raw Image", [](ModelConfig& c) { c.branch_mode = BranchMode::raw_only; });
    with("HF Image", [](ModelConfig& c) { c.branch_mode = BranchMode::hf_only; });
    with("LF Image", [](ModelConfig& c) { c.branch_mode = BranchMode::lf_only; });
    with("Cat(HF, LF)", [](ModelConfig& c) { c.branch_mode = BranchMode::concat; });
    with("FFBI(HF, LF)", [](ModelConfig& c) { c.branch_mode = BranchMode::ffbi; });
  } else {
    with("No Text", [](ModelConfig& c) { c.text_enabled = false; });
    for (int64_t n = 1; n <= 4; ++n) {
      with(std::to_string(n) + (n == 1 ? " layer" : " layers"), [n](ModelConfig& c) {
        c.text_enabled = true;
        c.lffi_layers = n;
      });
    }
  }
  return rows;
}

struct AblationResult {
  std::string label;
  uint64_t seed = 0;
  float dice_pct = 0.0f;
  float miou_pct = 0.0f;
  int64_t steps = 0;
  double wall_seconds = 0.0;
};

struct AblationSummary {
  std::string label;
  double dice_mean = 0, dice_std = 0, miou_mean = 0, miou_std = 0;
  size_t runs = 0;
};

/// One training run per (row, seed); the model seed and the shuffle seed are
/// both the run seed. Reported metrics are the final model on `test`.
inline std::vector<AblationResult> run_ablation(const std::vector<AblationRow>& rows, const TrainConfig& train_cfg,
                                                const std::vector<uint64_t>& seeds,
                                                const std::vector<SampleRecord>& train_set,
                                                const std::vector<SampleRecord>& test_set, const Vocab& vocab,
                                                std::ostream* progress = nullptr) {
  std::vector<AblationResult> out;
  for (const auto& row : rows) {
    for (uint64_t seed : seeds) {
      TrainConfig tc = train_cfg;
      tc.seed = seed;
      tc.eval_every = 0;
      const auto t0 = std::chrono::steady_clock::now();
      FmiSegModel model(row.config, seed);
      TrainOptions opt;
      opt.eval_set = &test_set;
      const TrainResult r = train(model, tc, train_set, vocab, opt);
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      out.push_back({row.label, seed, r.last.eval.fused.dice_pct, r.last.eval.fused.miou_pct, tc.steps, wall});
      if (progress) {
        *progress << row.label << " seed " << seed << ": dice " << out.back().dice_pct << " miou " << out.back().miou_pct
                  << " (" << static_cast<int64_t>(wall + 0.5) << " s)" << std::endl;
      }
    }
  }
  return out;
}

/// Mean and sample standard deviation per label, in first-seen order.
inline std::vector<AblationSummary> summarize(const std::vector<AblationResult>& results) {
  std::vector<AblationSummary> out;
  for (const auto& r : results) {
    bool seen = false;
    for (const auto& s : out) seen = seen || s.label == r.label;
    if (seen) continue;
    AblationSummary s;
    s.label = r.label;
    std::vector<double> d, m;
    for (const auto& q : results) {
      if (q.label != r.label) continue;
      d.push_back(q.dice_pct);
      m.push_back(q.miou_pct);
    }
    auto stats = [](const std::vector<double>& v, double& mean, double& sd) {
      mean = 0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      sd = 0;
      for (double x : v) sd += (x - mean) * (x - mean);
      sd = v.size() > 1 ? std::sqrt(sd / static_cast<double>(v.size() - 1)) : 0.0;
    };
    stats(d, s.dice_mean, s.dice_std);
    stats(m, s.miou_mean, s.miou_std);
    s.runs = d.size();
    out.push_back(s);
  }
  return out;
}

inline const AblationSummary& summary_for(const std::vector<AblationSummary>& s, const std::string& label) {
  for (const auto& x : s) {
    if (x.label == label) return x;
  }
  throw ConfigError("no ablation row labelled '" + label + "'");
}

/// Per-run lines, then for each label a "mean" and a "std" line with the seed
/// column holding that word.
inline void write_ablation_csv(std::ostream& os, const std::vector<AblationResult>& results) {
  auto quote = [](const std::string& s) { return s.find(',') == std::string::npos ? s : "\"" + s + "\""; };
  os << "row_label,seed,dice_pct,miou_pct,steps,wall_seconds\n";
  os << std::setprecision(6);
  for (const auto& r : results) {
    os << quote(r.label) << ',' << r.seed << ',' << r.dice_pct << ',' << r.miou_pct << ',' << r.steps << ','
       << r.wall_seconds << '\n';
  }
  for (const auto& s : summarize(results)) {
    int64_t steps = 0;
    double wall = 0;
    for (const auto& r : results) {
      if (r.label == s.label) {
        steps = r.steps;
        wall += r.wall_seconds;
      }
    }
    os << quote(s.label) << ",mean," << s.dice_mean << ',' << s.miou_mean << ',' << steps << ',' << wall << '\n';
    os << quote(s.label) << ",std," << s.dice_std << ',' << s.miou_std << ',' << steps << ',' << wall << '\n';
  }
}

inline void write_ablation_csv(const std::string& path, const std::vector<AblationResult>& results) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  write_ablation_csv(f, results);
}

}  // namespace fmiseg
