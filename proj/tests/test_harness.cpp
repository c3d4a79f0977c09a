#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"

using namespace fmiseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fmiseg_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Tensor mask_from(Shape s, const std::vector<int>& bits) {
  Tensor t(std::move(s));
  for (size_t i = 0; i < bits.size(); ++i) t.data()[i] = static_cast<float>(bits[i]);
  return t;
}

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.ptr(), b.ptr(), sizeof(float) * static_cast<size_t>(a.numel())) == 0;
}

}  // namespace

// ------------------------------------------------------------ schedule

TEST(Schedule, Examples) {
  EXPECT_EQ(cosine_lr(0, 1000), 3e-4f);
  EXPECT_EQ(cosine_lr(1000, 1000), 1e-6f);
  EXPECT_NEAR(cosine_lr(500, 1000), 1.505e-4f, 1e-10f);
  EXPECT_EQ(cosine_lr(1200, 1000), 1e-6f);
}

TEST(Schedule, MonotoneNonIncreasing) {
  for (int64_t total : {1, 7, 300, 1500}) {
    float prev = cosine_lr(0, total);
    for (int64_t s = 1; s <= total; ++s) {
      const float cur = cosine_lr(s, total);
      EXPECT_LE(cur, prev) << "step " << s << " of " << total;
      prev = cur;
    }
  }
}

// ------------------------------------------------------------ optimizer

TEST(AdamW, Examples) {
  {
    std::vector<float> p{0.5f, -2.0f};
    const std::vector<float> g{0.0f, 0.0f};
    AdamState st;
    adamw_update(p, g, st, 1, 0.1f, {.weight_decay = 0.0f});
    EXPECT_EQ(p, (std::vector<float>{0.5f, -2.0f}));
  }
  {
    std::vector<float> p{0.0f};
    const std::vector<float> g{1.0f};
    AdamState st;
    adamw_update(p, g, st, 1, 0.1f, {.weight_decay = 0.0f});
    EXPECT_NEAR(p[0], -0.1f, 1e-6f);
  }
  {
    std::vector<float> p{1.0f};
    const std::vector<float> g{0.0f};
    AdamState st;
    adamw_update(p, g, st, 1, 0.1f, {.weight_decay = 0.01f});
    EXPECT_FLOAT_EQ(p[0], 0.999f);
  }
}

TEST(AdamW, FirstStepIsBoundedByLearningRate) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(-5.0f, 5.0f);
  std::vector<float> p(64), g(64);
  for (size_t i = 0; i < 64; ++i) g[i] = u(rng);  // p = 0 keeps the measured step free of rounding in p
  const auto p0 = p;
  AdamState st;
  adamw_update(p, g, st, 1, 1e-3f, {.weight_decay = 0.0f});
  for (size_t i = 0; i < 64; ++i) EXPECT_LE(std::abs(p[i] - p0[i]), 1e-3f * (1.0f + 1e-5f));
}

TEST(AdamW, NonFiniteGradientAbortsWholeStep) {
  nn::ParamStore store;
  Tensor a = store.add("a", Tensor({2}, 1.0f)), b = store.add("b", Tensor({2}, 1.0f));
  a.grad()[0] = 0.5f;
  b.grad()[1] = std::numeric_limits<float>::quiet_NaN();
  AdamW opt(store);
  EXPECT_THROW(opt.step(0.1f), NumericalError);
  EXPECT_EQ(a.data()[0], 1.0f);
  EXPECT_EQ(opt.step_count(), 0);
}

// ------------------------------------------------------------ metrics

TEST(Metrics, DiceExamples) {
  const Tensor g = mask_from({1, 1, 2, 4}, {1, 1, 1, 1, 0, 0, 0, 0});
  EXPECT_FLOAT_EQ(dice_metric(g, g), 100.0f);
  EXPECT_FLOAT_EQ(dice_metric(mask_from({1, 1, 2, 4}, {0, 0, 0, 0, 1, 1, 0, 0}), g), 0.0f);
  EXPECT_NEAR(dice_metric(mask_from({1, 1, 2, 4}, {1, 1, 0, 0, 0, 0, 0, 0}), g), 66.6667f, 1e-3f);
  EXPECT_FLOAT_EQ(dice_metric(Tensor({1, 1, 2, 2}), Tensor({1, 1, 2, 2})), 100.0f);
  EXPECT_THROW(dice_metric(Tensor({1, 1, 2, 2}), Tensor({1, 1, 2, 3})), ShapeError);
}

TEST(Metrics, MiouExamples) {
  const Tensor g = mask_from({1, 1, 2, 2}, {1, 0, 1, 0});
  EXPECT_FLOAT_EQ(miou_metric(g, g), 100.0f);
  EXPECT_FLOAT_EQ(miou_metric(Tensor::ones({1, 1, 2, 2}), Tensor::zeros({1, 1, 2, 2})), 0.0f);
  // 4x4: ground truth = left half, prediction = top half. Both classes have
  // intersection 4 and union 12, so the two-class mean is 1/3.
  Tensor left({1, 1, 4, 4}), top({1, 1, 4, 4});
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t j = 0; j < 4; ++j) {
      left.at({0, 0, i, j}) = j < 2 ? 1.0f : 0.0f;
      top.at({0, 0, i, j}) = i < 2 ? 1.0f : 0.0f;
    }
  EXPECT_NEAR(miou_metric(top, left), 100.0f / 3.0f, 1e-3f);
  EXPECT_NEAR(oracle::mask_scores(top, left).miou, 100.0 / 3.0, 1e-9);
}

TEST(Metrics, AgreeWithSetCountingOracle) {
  std::mt19937_64 rng(2);
  std::bernoulli_distribution coin(0.4);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor p({3, 1, 8, 8}), g({3, 1, 8, 8});
    for (auto& v : p.data()) v = coin(rng) ? 1.0f : 0.0f;
    for (auto& v : g.data()) v = coin(rng) ? 1.0f : 0.0f;
    const auto want = oracle::mask_scores(p, g);
    EXPECT_NEAR(dice_metric(p, g), want.dice, 1e-3);
    EXPECT_NEAR(miou_metric(p, g), want.miou, 1e-3);
  }
}

// ------------------------------------------------------------ synthetic data

TEST(Synth, DeterministicPerSeedAndIndex) {
  const auto a = synth_generate(5, 4, 64), b = synth_generate(5, 4, 64);
  const auto c = synth_sample(5, 3, 64);
  for (size_t i = 0; i < 4; ++i) {
    EXPECT_TRUE(same_bits(a[i].image, b[i].image));
    EXPECT_TRUE(same_bits(a[i].mask, b[i].mask));
    EXPECT_EQ(a[i].caption, b[i].caption);
  }
  EXPECT_TRUE(same_bits(a[3].image, c.image));
  EXPECT_FALSE(same_bits(a[0].image, synth_sample(6, 0, 64).image));
  EXPECT_THROW(synth_sample(0, 0, 48), ConfigError);
}

TEST(Synth, CaptionNamesTheMaskedLesionQuadrant) {
  const Vocab vocab = synth_vocab();
  for (int64_t i = 0; i < 1000; ++i) {
    const auto r = synth_sample(77, i, 64);
    double sy = 0, sx = 0, n = 0;
    for (int64_t y = 0; y < 64; ++y)
      for (int64_t x = 0; x < 64; ++x)
        if (r.mask.at({0, y, x}) > 0.5f) sy += y + 0.5, sx += x + 0.5, n += 1;
    ASSERT_GT(n, 0) << r.id;
    Quadrant q;
    ASSERT_TRUE(caption_quadrant(r.caption, q)) << r.caption;
    const bool upper = sy / n < 32.0, left = sx / n < 32.0;
    EXPECT_EQ(upper, q == Quadrant::upper_left || q == Quadrant::upper_right) << r.id << " " << r.caption;
    EXPECT_EQ(left, q == Quadrant::upper_left || q == Quadrant::lower_left) << r.id << " " << r.caption;
    for (const auto& w : split_words(r.caption)) EXPECT_TRUE(vocab.contains(w)) << w;
  }
}

TEST(Synth, MaskIsBinaryAndImageInRange) {
  const auto r = synth_sample(3, 0, 32, {.two_lesion_prob = 1.0});
  for (float v : r.mask.data()) EXPECT_TRUE(v == 0.0f || v == 1.0f);
  for (float v : r.image.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_FALSE(r.caption.empty());
}

// ------------------------------------------------------------ dataset I/O

TEST(Dataset, EmptyDirectoryGivesEmptyList) {
  const auto dir = scratch_dir("empty");
  EXPECT_TRUE(load_dataset(dir.string()).empty());
  EXPECT_THROW(load_dataset((dir / "missing").string()), DataError);
}

TEST(Dataset, ExportReloadWithinQuantization) {
  const auto dir = scratch_dir("roundtrip");
  const auto recs = synth_generate(9, 3, 32);
  export_dataset(recs, dir.string());
  const auto back = load_dataset(dir.string());
  ASSERT_EQ(back.size(), recs.size());
  for (size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(back[i].id, recs[i].id);
    EXPECT_EQ(back[i].caption, recs[i].caption);
    EXPECT_LE(oracle::max_abs_diff(back[i].image, oracle::to_vec(recs[i].image)), 0.5 / 255.0 + 1e-6);
    EXPECT_TRUE(same_bits(back[i].mask, recs[i].mask));
  }
}

TEST(Dataset, GreyscaleIsReplicatedAndMaskThresholded) {
  const auto dir = scratch_dir("grey");
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  write_png((dir / "images" / "a.png").string(), Image8{2, 1, 1, {0, 255}});
  write_png((dir / "masks" / "a.png").string(), Image8{2, 1, 1, {255, 0}});
  std::ofstream(dir / "captions.tsv") << "a\tupper left\n";
  const auto recs = load_dataset(dir.string());
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].image.shape(), (Shape{3, 1, 2}));
  for (int64_t c = 0; c < 3; ++c) {
    EXPECT_EQ(recs[0].image.at({c, 0, 0}), 0.0f);
    EXPECT_EQ(recs[0].image.at({c, 0, 1}), 1.0f);
  }
  EXPECT_EQ(recs[0].mask.at({0, 0, 0}), 1.0f);
  EXPECT_EQ(recs[0].mask.at({0, 0, 1}), 0.0f);
}

TEST(Dataset, MissingMaskOrCaptionListsIds) {
  const auto dir = scratch_dir("incomplete");
  export_dataset(synth_generate(1, 3, 32), dir.string());
  const auto ids = synth_generate(1, 3, 32);
  fs::remove(dir / "masks" / (ids[1].id + ".png"));
  std::ofstream(dir / "captions.tsv") << ids[0].id << "\tx\n" << ids[1].id << "\ty\n";
  try {
    load_dataset(dir.string());
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("missing mask for: " + ids[1].id), std::string::npos) << msg;
    EXPECT_NE(msg.find("missing caption for: " + ids[2].id), std::string::npos) << msg;
  }
}

TEST(Dataset, BatchStacksRecords) {
  const auto recs = synth_generate(2, 3, 32);
  const Vocab v = build_vocab(recs);
  const Batch b = make_batch(recs, {2, 0}, v, 12);
  EXPECT_EQ(b.images.shape(), (Shape{2, 3, 32, 32}));
  EXPECT_EQ(b.tokens.batch, 2);
  EXPECT_EQ(b.images.at({0, 1, 5, 7}), recs[2].image.at({1, 5, 7}));
  EXPECT_EQ(b.masks.at({1, 0, 9, 3}), recs[0].mask.at({0, 9, 3}));
}

// ------------------------------------------------------------ config

TEST(Config, ParsesAndRoundTrips) {
  ModelConfig m;
  TrainConfig t;
  apply_config(parse_key_values("preset = tiny\n# comment\nbranch_mode = concat  # trailing\nlr0 = 0.001\nchannels = 4, 8, 8, 16\n"),
               m, t);
  EXPECT_EQ(m.branch_mode, BranchMode::concat);
  EXPECT_EQ(m.image_size, 32);
  EXPECT_EQ(m.channels[2], 8);
  EXPECT_FLOAT_EQ(t.lr0, 1e-3f);
  ModelConfig m2;
  TrainConfig t2;
  apply_config(parse_key_values(format_config(m, t)), m2, t2);
  EXPECT_EQ(format_config(m2, t2), format_config(m, t));
}

TEST(Config, Errors) {
  ModelConfig m;
  TrainConfig t;
  EXPECT_THROW(apply_config(parse_key_values("bogus = 1"), m, t), ConfigError);
  EXPECT_THROW(parse_key_values("no equals sign"), ConfigError);
  EXPECT_THROW(parse_key_values("a = 1\na = 2"), ConfigError);
  EXPECT_THROW(apply_config(parse_key_values("steps = ten"), m, t), ConfigError);
  EXPECT_THROW(apply_config(parse_key_values("channels = 1,2,3"), m, t), ConfigError);
  EXPECT_THROW(apply_config(parse_key_values("lr_min = 0.1"), m, t), ConfigError);
  EXPECT_THROW(apply_config(parse_key_values("preset = huge"), m, t), ConfigError);
  EXPECT_THROW(load_config_file("/nonexistent.cfg", m, t), ConfigError);
}

TEST(Config, Presets) {
  EXPECT_FLOAT_EQ(TrainConfig{}.lr0, 3e-4f);
  EXPECT_FLOAT_EQ(TrainConfig{}.lr_min, 1e-6f);
  EXPECT_EQ(TrainConfig::full().batch_size, 32);
  EXPECT_EQ(TrainConfig::toy().batch_size, 4);
  EXPECT_EQ(ModelConfig::full().channels, (std::array<int64_t, 4>{96, 192, 384, 768}));
}

// ------------------------------------------------------------ checkpoint

TEST(Checkpoint, RoundTripGivesBitwiseLogits) {
  const auto dir = scratch_dir("ckpt");
  const auto recs = synth_generate(4, 2, 32);
  const Vocab vocab = build_vocab(recs);
  ModelConfig mc = ModelConfig::tiny();
  mc.vocab_size = vocab.size();
  TrainConfig tc = TrainConfig::tiny();
  tc.seed = 11;
  FmiSegModel model(mc, 3);  // model seed differs from tc.seed on purpose
  for (const auto& [name, t] : model.params().entries()) {
    Tensor h = t;
    for (auto& v : h.data()) v += 0.01f;
  }
  std::mt19937_64 rng(42);
  rng.discard(17);
  const std::string path = (dir / "m.ckpt").string();
  save_checkpoint(path, model, tc, vocab, rng, 123);

  const auto ck = load_checkpoint(path);
  EXPECT_EQ(ck.step, 123);
  EXPECT_TRUE(ck.rng == rng);
  EXPECT_EQ(ck.vocab.size(), vocab.size());
  EXPECT_EQ(format_config(ck.model_config, ck.train_config), format_config(mc, tc));
  const Batch b = make_batch(recs, {0, 1}, vocab, mc.max_len);
  NoGradScope off;
  const auto o1 = model.forward(b.images, b.tokens), o2 = ck.model->forward(b.images, b.tokens);
  EXPECT_TRUE(same_bits(o1.logits_lf, o2.logits_lf));
  EXPECT_TRUE(same_bits(o1.logits_hf, o2.logits_hf));
}

TEST(Checkpoint, MissingParameterIsADataError) {
  const auto dir = scratch_dir("ckpt_bad");
  FmiSegModel model(ModelConfig::tiny());
  NamedTensors partial(model.params().entries().begin(), model.params().entries().end() - 1);
  const std::string path = (dir / "m.ckpt").string();
  save_checkpoint(path, partial, model.config(), TrainConfig::tiny(), synth_vocab(), std::mt19937_64(1), 0);
  EXPECT_THROW(load_checkpoint(path), DataError);
}

// ------------------------------------------------------------ training

namespace {

struct TinySetup {
  std::vector<SampleRecord> data = synth_generate(21, 4, 32);
  Vocab vocab = build_vocab(data);
  ModelConfig mc = [this] {
    ModelConfig c = ModelConfig::tiny();
    c.vocab_size = vocab.size();
    return c;
  }();
};

}  // namespace

TEST(Train, ZeroStepsEqualsUntrainedEvaluation) {
  TinySetup s;
  TrainConfig tc = TrainConfig::tiny();
  tc.steps = 0;
  FmiSegModel a(s.mc, 1), b(s.mc, 1);
  const auto r = train(a, tc, s.data, s.vocab);
  const auto e = evaluate(b, s.data, s.vocab);
  ASSERT_EQ(r.log.size(), 1u);
  EXPECT_EQ(r.last.eval.fused.dice_pct, e.fused.dice_pct);
  EXPECT_EQ(r.last.eval.fused.miou_pct, e.fused.miou_pct);
}

TEST(Train, SameSeedGivesIdenticalLogsAndParameters) {
  TinySetup s;
  TrainConfig tc = TrainConfig::tiny();
  tc.steps = 6;
  tc.eval_every = 3;
  const auto dir = scratch_dir("train_det");
  auto run = [&](const std::string& tag, FmiSegModel& m) {
    TrainOptions opt;
    opt.metrics_csv = (dir / (tag + ".csv")).string();
    opt.checkpoint_path = (dir / (tag + ".ckpt")).string();
    return train(m, tc, s.data, s.vocab, opt);
  };
  FmiSegModel a(s.mc, 2), b(s.mc, 2);
  const auto ra = run("a", a), rb = run("b", b);
  ASSERT_EQ(ra.log.size(), 2u);
  for (size_t i = 0; i < ra.log.size(); ++i) EXPECT_EQ(metric_csv_line(ra.log[i]), metric_csv_line(rb.log[i]));
  for (size_t i = 0; i < a.params().entries().size(); ++i)
    EXPECT_TRUE(same_bits(a.params().entries()[i].second, b.params().entries()[i].second));
  auto slurp = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
  };
  EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
  EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
  EXPECT_EQ(slurp(dir / "a.csv").substr(0, metric_csv_header().size()), metric_csv_header());
}

TEST(Train, LossDecreasesOnTinySet) {
  TinySetup s;
  TrainConfig tc = TrainConfig::tiny();
  tc.steps = 30;
  tc.eval_every = 10;
  FmiSegModel m(s.mc, 3);
  const auto r = train(m, tc, s.data, s.vocab);
  ASSERT_EQ(r.log.size(), 3u);
  EXPECT_LT(r.log.back().train_loss, r.log.front().train_loss);
  EXPECT_GE(r.best.eval.fused.dice_pct, r.last.eval.fused.dice_pct);
  EXPECT_FALSE(r.best_params.empty());
}

TEST(Train, EpochOrderIsAPermutation) {
  const auto o = epoch_order(3, 2, 17);
  std::vector<size_t> sorted = o;
  std::sort(sorted.begin(), sorted.end());
  for (size_t i = 0; i < 17; ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_EQ(o, epoch_order(3, 2, 17));
  EXPECT_NE(o, epoch_order(3, 3, 17));
}

// ------------------------------------------------------------ ablation

TEST(Ablation, RowSets) {
  const auto freq = ablation_rows(AblationSuite::frequency, ModelConfig::toy());
  ASSERT_EQ(freq.size(), 5u);
  EXPECT_EQ(freq[0].label, "Raw Image");
  EXPECT_EQ(freq[3].config.branch_mode, BranchMode::concat);
  EXPECT_EQ(freq[4].config.branch_mode, BranchMode::ffbi);
  const auto lffi = ablation_rows(AblationSuite::lffi_layers, ModelConfig::toy());
  ASSERT_EQ(lffi.size(), 5u);
  EXPECT_EQ(lffi[0].label, "No Text");
  EXPECT_FALSE(lffi[0].config.text_enabled);
  for (int64_t k = 1; k <= 4; ++k) {
    EXPECT_TRUE(lffi[static_cast<size_t>(k)].config.text_enabled);
    EXPECT_EQ(lffi[static_cast<size_t>(k)].config.lffi_layers, k);
  }
  EXPECT_THROW(ablation_suite_from_string("depth"), ConfigError);
}

TEST(Ablation, CsvHasRunsThenSummaries) {
  const std::vector<AblationResult> rs{{"Cat(HF, LF)", 0, 80.0f, 70.0f, 10, 1.5},
                                       {"Cat(HF, LF)", 1, 90.0f, 74.0f, 10, 1.5},
                                       {"No Text", 0, 50.0f, 60.0f, 10, 2.0}};
  std::ostringstream os;
  write_ablation_csv(os, rs);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "row_label,seed,dice_pct,miou_pct,steps,wall_seconds");
  std::getline(in, line);
  EXPECT_EQ(line.rfind("\"Cat(HF, LF)\",0,80", 0), 0u) << line;
  const auto s = summarize(rs);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_DOUBLE_EQ(summary_for(s, "Cat(HF, LF)").dice_mean, 85.0);
  EXPECT_NEAR(summary_for(s, "Cat(HF, LF)").dice_std, std::sqrt(50.0), 1e-9);
  EXPECT_EQ(summary_for(s, "No Text").dice_std, 0.0);
  EXPECT_NE(os.str().find("mean"), std::string::npos);
}

TEST(Ablation, RunProducesOneResultPerRowAndSeed) {
  TinySetup s;
  TrainConfig tc = TrainConfig::tiny();
  tc.steps = 2;
  auto rows = ablation_rows(AblationSuite::lffi_layers, s.mc);
  rows.resize(2);
  const auto rs = run_ablation(rows, tc, {0, 1}, s.data, s.data, s.vocab);
  ASSERT_EQ(rs.size(), 4u);
  EXPECT_EQ(rs[0].label, "No Text");
  EXPECT_EQ(rs[3].seed, 1u);
  EXPECT_EQ(rs[3].steps, 2);
}
