#pragma once

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "fmiseg/harness/checkpoint.hpp"
#include "fmiseg/harness/dataset.hpp"
#include "fmiseg/harness/metrics.hpp"
#include "fmiseg/harness/optim.hpp"
#include "fmiseg/harness/schedule.hpp"
#include "fmiseg/segmodel.hpp"

namespace fmiseg {

/// Fused-mask metrics plus each head on its own.
struct EvalReport {
  MetricReport fused;
  MetricReport lf_head;
  MetricReport hf_head;
};

inline EvalReport evaluate(const FmiSegModel& model, const std::vector<SampleRecord>& data, const Vocab& vocab,
                           int64_t batch_size = 8) {
  EvalReport rep;
  if (data.empty()) return rep;
  NoGradScope no_grad;
  const auto n = static_cast<int64_t>(data.size());
  const auto& first = data.front().mask;
  Tensor pred({n, 1, first.dim(1), first.dim(2)});
  Tensor pred_lf(pred.shape()), pred_hf(pred.shape()), gt(pred.shape());
  const int64_t plane = first.numel();
  for (int64_t start = 0; start < n; start += batch_size) {
    std::vector<size_t> idx;
    for (int64_t i = start; i < std::min(n, start + batch_size); ++i) idx.push_back(static_cast<size_t>(i));
    const Batch b = make_batch(data, idx, vocab, model.config().max_len);
    const SegOutput out = model.forward(b.images, b.tokens);
    for (int64_t i = 0; i < b.images.dim(0); ++i) {
      for (int64_t p = 0; p < plane; ++p) {
        const int64_t src = i * plane + p, dst = (start + i) * plane + p;
        pred.ptr()[dst] = out.fused_prob.ptr()[src] >= 0.5f ? 1.0f : 0.0f;
        pred_lf.ptr()[dst] = out.logits_lf.ptr()[src] >= 0.0f ? 1.0f : 0.0f;
        pred_hf.ptr()[dst] = out.logits_hf.ptr()[src] >= 0.0f ? 1.0f : 0.0f;
        gt.ptr()[dst] = b.masks.ptr()[src];
      }
    }
  }
  rep.fused = evaluate_masks(pred, gt);
  rep.lf_head = evaluate_masks(pred_lf, gt);
  rep.hf_head = evaluate_masks(pred_hf, gt);
  return rep;
}

struct MetricRow {
  int64_t step = 0;
  float lr = 0.0f;
  float train_loss = 0.0f;  // mean over the steps since the previous row
  EvalReport eval;
};

struct TrainOptions {
  const std::vector<SampleRecord>* eval_set = nullptr;  // defaults to the training set
  std::string metrics_csv;                              // written when non-empty
  std::string checkpoint_path;                          // best-Dice checkpoint, written when non-empty
  std::ostream* progress = nullptr;
};

struct TrainResult {
  std::vector<MetricRow> log;
  MetricRow best;
  NamedTensors best_params;  // deep copies taken at the best evaluation
  MetricRow last;
};

inline std::string metric_csv_header() { return "step,lr,train_loss,dice_pct,miou_pct,fg_iou_pct,lf_dice_pct,hf_dice_pct"; }

inline std::string metric_csv_line(const MetricRow& r) {
  std::ostringstream os;
  os << std::setprecision(8) << r.step << ',' << r.lr << ',' << r.train_loss << ',' << r.eval.fused.dice_pct << ','
     << r.eval.fused.miou_pct << ',' << r.eval.fused.fg_iou_pct << ',' << r.eval.lf_head.dice_pct << ','
     << r.eval.hf_head.dice_pct;
  return os.str();
}

/// Epoch order for a seed: a permutation that depends only on (seed, epoch).
inline std::vector<size_t> epoch_order(uint64_t seed, int64_t epoch, size_t n) {
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), static_cast<uint32_t>(epoch), 0xe90cu};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

/// AdamW + per-step cosine schedule on Dice + BCE over both heads. Batches are
/// consecutive slices of the per-epoch permutation; a tail shorter than the
/// batch size is dropped.
inline TrainResult train(FmiSegModel& model, const TrainConfig& cfg, const std::vector<SampleRecord>& data,
                         const Vocab& vocab, const TrainOptions& opt = {}) {
  cfg.validate();
  if (data.empty()) throw DataError("training set is empty");
  const auto& eval_set = opt.eval_set ? *opt.eval_set : data;
  AdamW optim(model.params(), {cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay});
  std::mt19937_64 rng(cfg.seed);
  const size_t batch = std::min<size_t>(static_cast<size_t>(cfg.batch_size), data.size());

  TrainResult result;
  result.best.eval.fused.dice_pct = -1.0f;
  std::ofstream csv;
  if (!opt.metrics_csv.empty()) {
    csv.open(opt.metrics_csv);
    if (!csv) throw DataError("cannot write " + opt.metrics_csv);
    csv << metric_csv_header() << '\n';
  }

  double loss_acc = 0.0;
  int64_t loss_n = 0;
  auto record_eval = [&](int64_t step, float lr) {
    MetricRow row;
    row.step = step;
    row.lr = lr;
    row.train_loss = loss_n ? static_cast<float>(loss_acc / static_cast<double>(loss_n)) : 0.0f;
    row.eval = evaluate(model, eval_set, vocab);
    loss_acc = 0.0;
    loss_n = 0;
    result.log.push_back(row);
    if (csv.is_open()) csv << metric_csv_line(row) << std::endl;
    if (opt.progress) {
      *opt.progress << "step " << step << " loss " << row.train_loss << " dice " << row.eval.fused.dice_pct << " miou "
                    << row.eval.fused.miou_pct << std::endl;
    }
    if (row.eval.fused.dice_pct > result.best.eval.fused.dice_pct) {
      result.best = row;
      result.best_params.clear();
      for (const auto& [name, t] : model.params().entries()) result.best_params.emplace_back(name, t.clone());
      if (!opt.checkpoint_path.empty()) {
        save_checkpoint(opt.checkpoint_path, result.best_params, model.config(), cfg, vocab, rng, step);
      }
    }
    result.last = row;
  };

  int64_t epoch = 0;
  std::vector<size_t> order = epoch_order(cfg.seed, epoch, data.size());
  size_t cursor = 0;
  float lr = cosine_lr(0, cfg.steps, cfg.lr0, cfg.lr_min);
  for (int64_t step = 0; step < cfg.steps; ++step) {
    if (cursor + batch > order.size()) {
      order = epoch_order(cfg.seed, ++epoch, data.size());
      cursor = 0;
    }
    const std::vector<size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                  order.begin() + static_cast<std::ptrdiff_t>(cursor + batch));
    cursor += batch;
    const Batch b = make_batch(data, idx, vocab, model.config().max_len);

    lr = cosine_lr(step, cfg.steps, cfg.lr0, cfg.lr_min);
    model.params().zero_grad();
    Tape tape;
    float loss_value = 0.0f;
    {
      TapeScope scope(tape);
      const Tensor loss = total_loss(model.forward(b.images, b.tokens), b.masks);
      loss_value = loss.item();
      tape.backward(loss);
    }
    optim.step(lr);
    loss_acc += loss_value;
    ++loss_n;
    if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 && step + 1 < cfg.steps) record_eval(step + 1, lr);
  }
  record_eval(cfg.steps, cosine_lr(cfg.steps, cfg.steps, cfg.lr0, cfg.lr_min));
  return result;
}

}  // namespace fmiseg
