#include <gtest/gtest.h>

#include <cstring>

#include "grad_suite.hpp"
#include "oracles.hpp"

using namespace fmiseg;

namespace {

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.ptr(), b.ptr(), sizeof(float) * static_cast<size_t>(a.numel())) == 0;
}

TokenBatch tokens_for(int64_t batch, int64_t len) {
  TokenBatch t;
  for (int64_t b = 0; b < batch; ++b) {
    TokenBatch one;
    one.batch = 1;
    one.len = len;
    one.ids.assign(static_cast<size_t>(len), 0);
    one.mask.assign(static_cast<size_t>(len), 0);
    for (int64_t i = 0; i < std::min<int64_t>(3 + b, len); ++i) {
      one.ids[static_cast<size_t>(i)] = 2 + (i + b) % 10;
      one.mask[static_cast<size_t>(i)] = 1;
    }
    t.append(one);
  }
  return t;
}

}  // namespace

TEST(Model, ToyShapes) {
  const FmiSegModel m(ModelConfig::toy());
  NoGradScope off;
  const auto o = m.forward(Tensor({1, 3, 64, 64}, 0.4f), tokens_for(1, 12));
  for (const Tensor* t : {&o.logits_lf, &o.logits_hf, &o.fused_prob}) EXPECT_EQ(t->shape(), (Shape{1, 1, 64, 64}));
  for (float v : o.fused_prob.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Model, ParameterCountMatchesScriptedCount) {
  EXPECT_EQ(FmiSegModel(ModelConfig::toy()).params().scalar_count(), oracle::model_param_count(ModelConfig::toy()));
  EXPECT_EQ(oracle::model_param_count(ModelConfig::toy()), 668802);
  for (auto mode : {BranchMode::raw_only, BranchMode::hf_only, BranchMode::concat, BranchMode::ffbi}) {
    for (int64_t layers : {0, 2, 4}) {
      for (bool text : {true, false}) {
        ModelConfig c = ModelConfig::tiny();
        c.branch_mode = mode;
        c.lffi_layers = layers;
        c.text_enabled = text;
        EXPECT_EQ(FmiSegModel(c).params().scalar_count(), oracle::model_param_count(c))
            << to_string(mode) << " layers " << layers << " text " << text;
      }
    }
  }
}

TEST(Model, TextDisabledMatchesZeroLffiLayersBitwise) {
  ModelConfig with = ModelConfig::tiny();
  with.lffi_layers = 0;
  ModelConfig without = with;
  without.text_enabled = false;
  FmiSegModel a(with, 4), b(without, 99);
  gradsuite::perturb(a.params(), 1, 0.2f);
  b.params().load(a.params().entries());  // text encoder weights simply go unused
  const Tensor img = gradsuite::rnd({2, 3, 32, 32}, 5, 0.0f, 1.0f);
  NoGradScope off;
  const auto oa = a.forward(img, tokens_for(2, 4)), ob = b.forward(img, tokens_for(2, 4));
  EXPECT_TRUE(bitwise_equal(oa.logits_lf, ob.logits_lf));
  EXPECT_TRUE(bitwise_equal(oa.logits_hf, ob.logits_hf));
  EXPECT_TRUE(bitwise_equal(oa.fused_prob, ob.fused_prob));
  EXPECT_FALSE(b.text_encoder().has_value());
  EXPECT_EQ(b.params().scalar_count("lffi."), 0);
}

TEST(Model, SingleBranchDuplicatesLogits) {
  for (auto mode : {BranchMode::raw_only, BranchMode::hf_only, BranchMode::lf_only}) {
    ModelConfig c = ModelConfig::tiny();
    c.branch_mode = mode;
    const FmiSegModel m(c, 2);
    NoGradScope off;
    const auto o = m.forward(gradsuite::rnd({1, 3, 32, 32}, 6, 0.0f, 1.0f), tokens_for(1, 4));
    EXPECT_TRUE(bitwise_equal(o.logits_lf, o.logits_hf));
    const Tensor target = gradsuite::rnd({1, 1, 32, 32}, 7, 0.0f, 1.0f);
    for (auto& v : Tensor(target).data()) v = v > 0.5f ? 1.0f : 0.0f;
    const float one = ops::add(dice_loss(ops::sigmoid(o.logits_lf), target), bce_loss(o.logits_lf, target)).item();
    EXPECT_EQ(total_loss(o, target).item(), 2.0f * one);
  }
}

TEST(Model, ZeroedFfbiAttentionEqualsIndependentBranchesWithLayerNorm) {
  FmiSegModel m(ModelConfig::tiny(), 3);
  gradsuite::perturb(m.params(), 2, 0.2f);
  for (const auto& [name, t] : m.params().entries()) {
    if (name.rfind("ffbi.", 0) == 0 && name.find(".attn.") != std::string::npos) {
      Tensor h = t;
      for (auto& v : h.data()) v = 0.0f;
    }
  }
  const Tensor img = gradsuite::rnd({1, 3, 32, 32}, 8, 0.0f, 1.0f);
  const TokenBatch tok = tokens_for(1, 4);
  NoGradScope off;
  const auto o = m.forward(img, tok);

  // manual wiring: each branch with LN on its own deepest features, no exchange
  const auto inputs = m.branch_inputs(img);
  const auto text = m.encode_text(tok);
  const auto& f = *m.ffbi_params();
  const auto& lf_br = m.branches()[0];
  const auto& hf_br = m.branches()[1];
  const auto pl = lf_br.encoder(inputs[0]), ph = hf_br.encoder(inputs[1]);
  auto ln = [](const Tensor& x, const nn::LayerNorm& n) {
    return nn::from_sequence(n(nn::to_sequence(x)), x.dim(2), x.dim(3));
  };
  const Tensor want_lf = m.decode_branch(lf_br, pl, ln(pl.f[3], f.lf.norm), &*text);
  const Tensor want_hf = m.decode_branch(hf_br, ph, ln(ph.f[3], f.hf.norm), &*text);
  EXPECT_LE(oracle::max_abs_diff(o.logits_lf, oracle::to_vec(want_lf)), 1e-5);
  EXPECT_LE(oracle::max_abs_diff(o.logits_hf, oracle::to_vec(want_hf)), 1e-5);
}

TEST(Model, ForwardIsDeterministic) {
  const FmiSegModel a(ModelConfig::tiny(), 7), b(ModelConfig::tiny(), 7);
  const Tensor img = gradsuite::rnd({2, 3, 32, 32}, 9, 0.0f, 1.0f);
  NoGradScope off;
  EXPECT_TRUE(bitwise_equal(a.forward(img, tokens_for(2, 4)).fused_prob, b.forward(img, tokens_for(2, 4)).fused_prob));
}

TEST(Model, ConfigValidation) {
  ModelConfig c = ModelConfig::tiny();
  c.lffi_layers = 5;
  EXPECT_THROW(FmiSegModel{c}, ConfigError);
  c = ModelConfig::tiny();
  c.image_size = 48;
  EXPECT_THROW(FmiSegModel{c}, ConfigError);
  c = ModelConfig::tiny();
  c.heads = 3;
  EXPECT_THROW(FmiSegModel{c}, ConfigError);
  EXPECT_THROW(branch_mode_from_string("both"), ConfigError);
}

TEST(Model, RejectsIndivisibleImage) {
  const FmiSegModel m(ModelConfig::tiny());
  NoGradScope off;
  EXPECT_THROW(m.forward(Tensor({1, 3, 32, 48}), tokens_for(1, 4)), ShapeError);
}

TEST(Decoder, StageDoublesSpatialSize) {
  nn::ParamStore s;
  std::mt19937_64 rng(1);
  nn::Builder b(s, rng);
  const ModelConfig cfg = ModelConfig::tiny();
  const DecoderStage st(b.sub("d"), std::nullopt, 5, 6, cfg.hidden, cfg);
  const Tensor out = decoder_stage(Tensor({2, 5, 3, 4}, 0.1f), Tensor({2, 6, 6, 8}, 0.2f), nullptr, st);
  EXPECT_EQ(out.shape(), (Shape{2, cfg.hidden, 6, 8}));
  EXPECT_THROW(decoder_stage(Tensor({2, 5, 3, 4}), Tensor({2, 6, 6, 7}), nullptr, st), ShapeError);
}

TEST(Decoder, WithoutLffiIsThePlainConvPath) {
  nn::ParamStore s;
  std::mt19937_64 rng(2);
  nn::Builder b(s, rng);
  const ModelConfig cfg = ModelConfig::tiny();
  const DecoderStage st(b.sub("d"), std::nullopt, 8, 4, 8, cfg);
  gradsuite::perturb(s, 3, 0.3f);
  const Tensor prev = gradsuite::rnd({1, 8, 2, 2}, 4), skip = gradsuite::rnd({1, 4, 4, 4}, 5);
  const Tensor x = ops::add(st.align_prev(ops::upsample_bilinear(prev, 2)), st.align_skip(skip));
  EXPECT_TRUE(bitwise_equal(decoder_stage(prev, skip, nullptr, st), st.conv(x)));
}

TEST(Decoder, LffiWithoutTextIsAConfigError) {
  nn::ParamStore s;
  std::mt19937_64 rng(3);
  nn::Builder b(s, rng);
  const ModelConfig cfg = ModelConfig::tiny();
  const DecoderStage st(b.sub("d"), b.sub("l"), 8, 4, 8, cfg);
  EXPECT_THROW(decoder_stage(Tensor({1, 8, 2, 2}), Tensor({1, 4, 4, 4}), nullptr, st), ConfigError);
}

TEST(Losses, DiceExamples) {
  const Tensor zeros = Tensor::zeros({1, 1, 4, 4}), ones = Tensor::ones({1, 1, 4, 4});
  EXPECT_NEAR(dice_loss(zeros, ones).item(), 1.0 - 1.0 / 17.0, 1e-6);
  EXPECT_EQ(dice_loss(zeros, zeros).item(), 0.0f);
  const Tensor big = Tensor::ones({1, 1, 32, 32});
  EXPECT_LE(dice_loss(big, big).item(), 1e-3f);
}

TEST(Losses, BceExamples) {
  EXPECT_NEAR(bce_loss(Tensor::zeros({1, 1, 2, 2}), Tensor::ones({1, 1, 2, 2})).item(), std::log(2.0), 1e-6);
  EXPECT_LE(bce_loss(Tensor::full({1, 1, 2, 2}, 50.0f), Tensor::ones({1, 1, 2, 2})).item(), 1e-12f);
  EXPECT_NEAR(bce_loss(Tensor::ones({1, 1, 1, 1}), Tensor::ones({1, 1, 1, 1})).item(), std::log1p(std::exp(-1.0)), 1e-6);
}

TEST(Losses, TotalLossAtZeroLogits) {
  Tensor target = Tensor::zeros({1, 1, 4, 4});
  for (int64_t i = 0; i < 6; ++i) target.data()[static_cast<size_t>(i)] = 1.0f;
  SegOutput o{Tensor::zeros({1, 1, 4, 4}), Tensor::zeros({1, 1, 4, 4}), Tensor()};
  const double dice = 1.0 - (2.0 * 0.5 * 6 + 1.0) / (0.5 * 16 + 6 + 1.0);
  EXPECT_NEAR(total_loss(o, target).item(), 2.0 * (dice + std::log(2.0)), 1e-5);
  SegOutput perfect{Tensor::full({1, 1, 4, 4}, -60.0f), Tensor::full({1, 1, 4, 4}, -60.0f), Tensor()};
  for (int64_t i = 0; i < 6; ++i) perfect.logits_lf.data()[static_cast<size_t>(i)] = perfect.logits_hf.data()[static_cast<size_t>(i)] = 60.0f;
  EXPECT_NEAR(total_loss(perfect, target).item(), 0.0f, 2.0f / 7.0f);  // dice smoothing term only
  EXPECT_GE(total_loss(perfect, target).item(), 0.0f);
}

TEST(Losses, MatchOracles) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor p = oracle::random_tensor({2, 1, 3, 5}, rng, 0.0f, 1.0f), z = oracle::random_tensor({2, 1, 3, 5}, rng, -6, 6);
    Tensor t = oracle::random_tensor({2, 1, 3, 5}, rng, 0.0f, 1.0f);
    for (auto& v : t.data()) v = v > 0.5f ? 1.0f : 0.0f;
    EXPECT_NEAR(dice_loss(p, t).item(), oracle::dice_loss(p, t), 1e-5);
    EXPECT_NEAR(bce_loss(z, t).item(), oracle::bce(z, t), 1e-5);
  }
}
