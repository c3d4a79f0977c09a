#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <string>

#include "fmiseg/harness/config_io.hpp"
#include "fmiseg/numerics/archive.hpp"
#include "fmiseg/segmodel.hpp"

// A checkpoint at PATH is four files:
//   PATH         tensor archive of all parameters, registration order
//   PATH.cfg     model + training keys (config_io format)
//   PATH.vocab   vocabulary, one token per line
//   PATH.rng     "step N" line, then the mt19937_64 state in stream form

namespace fmiseg {

struct LoadedCheckpoint {
  ModelConfig model_config;
  TrainConfig train_config;
  Vocab vocab;
  std::unique_ptr<FmiSegModel> model;
  std::mt19937_64 rng;
  int64_t step = 0;
};

inline void save_checkpoint(const std::string& path, const NamedTensors& params, const ModelConfig& mc,
                            const TrainConfig& tc, const Vocab& vocab, const std::mt19937_64& rng, int64_t step) {
  save_archive(path, params);
  {
    std::ofstream f(path + ".cfg");
    if (!f) throw DataError("cannot write " + path + ".cfg");
    f << format_config(mc, tc);
  }
  vocab.save(path + ".vocab");
  std::ofstream f(path + ".rng");
  if (!f) throw DataError("cannot write " + path + ".rng");
  f << "step " << step << '\n' << rng << '\n';
}

inline void save_checkpoint(const std::string& path, const FmiSegModel& model, const TrainConfig& tc,
                            const Vocab& vocab, const std::mt19937_64& rng, int64_t step) {
  save_checkpoint(path, model.params().entries(), model.config(), tc, vocab, rng, step);
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  LoadedCheckpoint ck;
  for (const char* ext : {"", ".cfg", ".vocab", ".rng"}) {
    if (!std::filesystem::exists(path + ext)) throw DataError("checkpoint file missing: " + path + ext);
  }
  load_config_file(path + ".cfg", ck.model_config, ck.train_config);
  ck.vocab = Vocab::load(path + ".vocab");
  {
    std::ifstream f(path + ".rng");
    if (!f) throw DataError("cannot read " + path + ".rng");
    std::string word;
    f >> word >> ck.step;
    f >> ck.rng;
    if (!f || word != "step") throw DataError("malformed " + path + ".rng");
  }
  ck.model = std::make_unique<FmiSegModel>(ck.model_config, ck.train_config.seed);
  ck.model->params().load(load_archive(path));
  return ck;
}

}  // namespace fmiseg
