// fmiseg command line: synthetic data, training, evaluation, ablations and
// wavelet inspection.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "fmiseg/fmiseg.hpp"

namespace fs = std::filesystem;
using namespace fmiseg;

namespace {

void check_vocab_fits(const Vocab& vocab, const ModelConfig& mc) {
  if (mc.text_enabled && vocab.size() > mc.vocab_size) {
    throw ConfigError("vocabulary has " + std::to_string(vocab.size()) + " entries but vocab_size is " +
                      std::to_string(mc.vocab_size));
  }
}

void print_report(const char* label, const MetricReport& r) {
  std::cout << label << ": dice " << r.dice_pct << "  miou " << r.miou_pct << "  fg_iou " << r.fg_iou_pct << '\n';
}

int cmd_synth(uint64_t seed, int64_t n, int64_t size, double two_prob, const std::string& out) {
  SynthOptions opt;
  opt.two_lesion_prob = two_prob;
  export_dataset(synth_generate(seed, n, size, opt), out);
  std::cout << "wrote " << n << " samples to " << out << '\n';
  return 0;
}

int cmd_train(const std::string& config, const std::string& data, const std::string& eval_data, const std::string& out) {
  ModelConfig mc = ModelConfig::toy();
  TrainConfig tc = TrainConfig::toy();
  if (!config.empty()) load_config_file(config, mc, tc);
  const auto train_set = load_dataset(data);
  if (train_set.empty()) throw DataError("no samples in " + data);
  const auto eval_set = eval_data.empty() ? train_set : load_dataset(eval_data);
  const Vocab vocab = build_vocab(train_set);
  check_vocab_fits(vocab, mc);

  fs::create_directories(out);
  FmiSegModel model(mc, tc.seed);
  TrainOptions opt;
  opt.eval_set = &eval_set;
  opt.metrics_csv = (fs::path(out) / "metrics.csv").string();
  opt.checkpoint_path = (fs::path(out) / "best.ckpt").string();
  opt.progress = &std::cerr;
  const TrainResult r = train(model, tc, train_set, vocab, opt);
  std::mt19937_64 rng(tc.seed);
  save_checkpoint((fs::path(out) / "final.ckpt").string(), model, tc, vocab, rng, tc.steps);
  std::cout << "best step " << r.best.step << '\n';
  print_report("best", r.best.eval.fused);
  print_report("final", r.last.eval.fused);
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data, const std::string& per_sample) {
  const auto ck = load_checkpoint(ckpt);
  const auto records = load_dataset(data);
  if (records.empty()) throw DataError("no samples in " + data);
  const EvalReport rep = evaluate(*ck.model, records, ck.vocab);
  print_report("fused", rep.fused);
  print_report("lf head", rep.lf_head);
  print_report("hf head", rep.hf_head);
  if (!per_sample.empty()) {
    std::ofstream f(per_sample);
    if (!f) throw DataError("cannot write " + per_sample);
    f << "id,dice,miou,fg_iou\n";
    for (size_t i = 0; i < records.size(); ++i) {
      const auto& s = rep.fused.per_sample[i];
      f << records[i].id << ',' << s.dice << ',' << s.miou << ',' << s.fg_iou << '\n';
    }
  }
  return 0;
}

struct AblateArgs {
  std::string suite, out, config;
  int64_t seeds = 3, train_n = 256, test_n = 64, steps = -1;
  uint64_t data_seed = 1000;
  double two_prob = 1.0;
};

int cmd_ablate(const AblateArgs& a) {
  ModelConfig mc = ModelConfig::toy();
  TrainConfig tc = TrainConfig::toy();
  if (!a.config.empty()) load_config_file(a.config, mc, tc);
  if (a.steps >= 0) tc.steps = a.steps;
  if (a.seeds < 1) throw ConfigError("--seeds must be at least 1");
  SynthOptions so;
  so.two_lesion_prob = a.two_prob;
  const auto train_set = synth_generate(a.data_seed, a.train_n, mc.image_size, so);
  const auto test_set = synth_generate(a.data_seed + 1000, a.test_n, mc.image_size, so);
  const Vocab vocab = synth_vocab();
  check_vocab_fits(vocab, mc);
  std::vector<uint64_t> seeds;
  for (int64_t s = 0; s < a.seeds; ++s) seeds.push_back(static_cast<uint64_t>(s));
  const auto rows = ablation_rows(ablation_suite_from_string(a.suite), mc);
  const auto results = run_ablation(rows, tc, seeds, train_set, test_set, vocab, &std::cerr);
  write_ablation_csv(a.out, results);
  for (const auto& s : summarize(results)) {
    std::cout << s.label << ": dice " << s.dice_mean << " +- " << s.dice_std << "  miou " << s.miou_mean << " +- "
              << s.miou_std << '\n';
  }
  return 0;
}

int cmd_wavelet_dump(const std::string& image, const std::string& out) {
  const Image8 im = read_png(image, png_channels(image));
  const int64_t c = im.channels, h = im.height, w = im.width;
  Tensor x({1, c, h, w});
  for (int64_t ch = 0; ch < c; ++ch) {
    for (int64_t i = 0; i < h * w; ++i) x.ptr()[ch * h * w + i] = im.pixels[static_cast<size_t>(i * c + ch)] / 255.0f;
  }
  const auto sb = wavelet::dwt2_haar(x);
  const auto pair = wavelet::frequency_decompose(x);
  fs::create_directories(out);
  const Tensor lf = ops::reshape(pair.lf_image, {c, h, w});
  Tensor hf = ops::reshape(pair.hf_image, {c, h, w}).clone();
  for (auto& v : hf.data()) v += 0.5f;  // detail is signed; shift mid-grey to 128
  write_png((fs::path(out) / "lf.png").string(), to_image8(lf));
  write_png((fs::path(out) / "hf.png").string(), to_image8(hf));
  save_archive((fs::path(out) / "subbands.fmt").string(),
               {{"ll", sb.ll}, {"lh", sb.lh}, {"hl", sb.hl}, {"hh", sb.hh}, {"lf", pair.lf_image}, {"hf", pair.hf_image}});
  std::cout << "wrote lf.png, hf.png, subbands.fmt to " << out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FMISeg: frequency and language guided lesion segmentation"};
  app.require_subcommand(1);

  uint64_t seed = 0;
  int64_t n = 64, size = 64;
  double two_prob = 0.5;
  std::string out, config, data, eval_data, ckpt, image, per_sample;
  AblateArgs ab;

  auto* synth = app.add_subcommand("synth", "generate a synthetic captioned dataset");
  synth->add_option("--seed", seed, "generator seed");
  synth->add_option("--n", n, "number of samples")->check(CLI::PositiveNumber);
  synth->add_option("--size", size, "image side, a multiple of 32");
  synth->add_option("--two-lesion-prob", two_prob, "fraction of samples with two lesions")->check(CLI::Range(0.0, 1.0));
  synth->add_option("--out", out, "output directory")->required();

  auto* trn = app.add_subcommand("train", "train a model on a dataset directory");
  trn->add_option("--config", config, "key = value config file");
  trn->add_option("--data", data, "training dataset directory")->required();
  trn->add_option("--eval-data", eval_data, "evaluation dataset directory (default: training set)");
  trn->add_option("--out", out, "output directory")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--ckpt", ckpt, "checkpoint path")->required();
  ev->add_option("--data", data, "dataset directory")->required();
  ev->add_option("--per-sample", per_sample, "write per-sample metrics CSV");

  auto* abl = app.add_subcommand("ablate", "run an ablation suite on synthetic data");
  abl->add_option("--suite", ab.suite, "frequency or lffi_layers")->required();
  abl->add_option("--seeds", ab.seeds, "number of seeds (0..N-1)");
  abl->add_option("--out", ab.out, "results CSV")->required();
  abl->add_option("--config", ab.config, "base config file");
  abl->add_option("--steps", ab.steps, "override training steps");
  abl->add_option("--train-n", ab.train_n, "training samples")->check(CLI::PositiveNumber);
  abl->add_option("--test-n", ab.test_n, "test samples")->check(CLI::PositiveNumber);
  abl->add_option("--data-seed", ab.data_seed, "synthetic data seed (test uses seed + 1000)");
  abl->add_option("--two-lesion-prob", ab.two_prob, "fraction of samples with two lesions")->check(CLI::Range(0.0, 1.0));

  auto* wd = app.add_subcommand("wavelet-dump", "write LF/HF images and Haar subbands of a PNG");
  wd->add_option("--image", image, "input PNG")->required();
  wd->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(seed, n, size, two_prob, out);
    if (trn->parsed()) return cmd_train(config, data, eval_data, out);
    if (ev->parsed()) return cmd_eval(ckpt, data, per_sample);
    if (abl->parsed()) return cmd_ablate(ab);
    if (wd->parsed()) return cmd_wavelet_dump(image, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 4;
  }
  return 0;
}
