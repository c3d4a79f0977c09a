#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "fmiseg/encoders.hpp"
#include "fmiseg/harness/synth.hpp"

// On-disk dataset layout:
//   DIR/images/<id>.png   8-bit grey or RGB
//   DIR/masks/<id>.png    8-bit; pixel > 127 is foreground
//   DIR/captions.tsv      <id> TAB <caption>, one per line

namespace fmiseg {

struct Image8 {
  int64_t width = 0, height = 0, channels = 0;  // channels: 1 (grey) or 3 (RGB)
  std::vector<uint8_t> pixels;                  // interleaved, row-major
};

inline Image8 read_png(const std::string& path, int64_t channels) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw DataError("cannot read PNG " + path + ": " + img.message);
  }
  img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image8 out;
  out.width = img.width;
  out.height = img.height;
  out.channels = channels;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw DataError("cannot decode PNG " + path + ": " + img.message);
  }
  return out;
}

/// Native colour type of a PNG (1 = grey, 3 = colour), without decoding pixels.
inline int64_t png_channels(const std::string& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) throw DataError("cannot read PNG " + path);
  const int64_t c = (img.format & PNG_FORMAT_FLAG_COLOR) ? 3 : 1;
  png_image_free(&img);
  return c;
}

inline void write_png(const std::string& path, const Image8& im) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(im.width);
  img.height = static_cast<png_uint_32>(im.height);
  img.format = im.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, im.pixels.data(), 0, nullptr)) {
    throw DataError("cannot write PNG " + path + ": " + img.message);
  }
}

inline uint8_t quantize_unit(float v) { return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

/// [C,H,W] in [0,1] with C in {1,3} -> 8-bit image.
inline Image8 to_image8(const Tensor& chw) {
  Image8 im;
  im.channels = chw.dim(0);
  im.height = chw.dim(1);
  im.width = chw.dim(2);
  im.pixels.resize(static_cast<size_t>(chw.numel()));
  const int64_t plane = im.height * im.width;
  for (int64_t c = 0; c < im.channels; ++c) {
    for (int64_t i = 0; i < plane; ++i) {
      im.pixels[static_cast<size_t>(i * im.channels + c)] = quantize_unit(chw.ptr()[c * plane + i]);
    }
  }
  return im;
}

inline std::vector<SampleRecord> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("dataset directory not found: " + dir);
  const fs::path root(dir);
  std::vector<SampleRecord> out;
  if (!fs::exists(root / "images")) return out;

  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(root / "images")) {
    if (e.path().extension() == ".png") ids.push_back(e.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) return out;

  std::map<std::string, std::string> captions;
  if (std::ifstream f(root / "captions.tsv"); f) {
    std::string line;
    while (std::getline(f, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const auto tab = line.find('\t');
      if (tab == std::string::npos) continue;
      captions[line.substr(0, tab)] = line.substr(tab + 1);
    }
  }
  std::vector<std::string> no_mask, no_caption;
  for (const auto& id : ids) {
    if (!fs::exists(root / "masks" / (id + ".png"))) no_mask.push_back(id);
    if (!captions.count(id)) no_caption.push_back(id);
  }
  if (!no_mask.empty() || !no_caption.empty()) {
    std::string msg = "dataset " + dir + " is incomplete.";
    auto list = [&](const char* what, const std::vector<std::string>& v) {
      if (v.empty()) return;
      msg += std::string(" ") + what + ":";
      for (const auto& id : v) msg += " " + id;
      msg += ".";
    };
    list("missing mask for", no_mask);
    list("missing caption for", no_caption);
    throw DataError(msg);
  }

  for (const auto& id : ids) {
    const std::string img_path = (root / "images" / (id + ".png")).string();
    const Image8 img = read_png(img_path, png_channels(img_path) == 1 ? 1 : 3);
    const Image8 msk = read_png((root / "masks" / (id + ".png")).string(), 1);
    if (img.width != msk.width || img.height != msk.height) throw DataError("image/mask size mismatch for " + id);
    SampleRecord r;
    r.id = id;
    r.caption = captions[id];
    r.image = Tensor({3, img.height, img.width});
    r.mask = Tensor({1, img.height, img.width});
    const int64_t plane = img.height * img.width;
    for (int64_t i = 0; i < plane; ++i) {
      for (int64_t c = 0; c < 3; ++c) {
        const uint8_t v = img.pixels[static_cast<size_t>(i * img.channels + (img.channels == 1 ? 0 : c))];
        r.image.data()[static_cast<size_t>(c * plane + i)] = static_cast<float>(v) / 255.0f;
      }
      r.mask.data()[static_cast<size_t>(i)] = msk.pixels[static_cast<size_t>(i)] > 127 ? 1.0f : 0.0f;
    }
    out.push_back(std::move(r));
  }
  return out;
}

/// Writes records in the on-disk layout (images quantized to 8 bits).
inline void export_dataset(const std::vector<SampleRecord>& records, const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  std::ofstream captions(root / "captions.tsv");
  if (!captions) throw DataError("cannot write captions in " + dir);
  for (const auto& r : records) {
    write_png((root / "images" / (r.id + ".png")).string(), to_image8(r.image));
    write_png((root / "masks" / (r.id + ".png")).string(), to_image8(r.mask));
    captions << r.id << '\t' << r.caption << '\n';
  }
}

/// Synthetic grammar words first, then unseen caption words in record order.
inline Vocab build_vocab(const std::vector<SampleRecord>& records) {
  Vocab v = synth_vocab();
  for (const auto& r : records) {
    for (const auto& w : split_words(r.caption)) v.add(w);
  }
  return v;
}

/// Stacked tensors and tokens for a subset of records.
struct Batch {
  Tensor images;  // [B,3,H,W]
  Tensor masks;   // [B,1,H,W]
  TokenBatch tokens;
};

inline Batch make_batch(const std::vector<SampleRecord>& records, const std::vector<size_t>& idx, const Vocab& vocab,
                        int64_t max_len) {
  if (idx.empty()) throw ShapeError("empty batch");
  const auto& first = records[idx[0]];
  const auto b = static_cast<int64_t>(idx.size());
  Batch batch;
  batch.images = Tensor({b, first.image.dim(0), first.image.dim(1), first.image.dim(2)});
  batch.masks = Tensor({b, 1, first.mask.dim(1), first.mask.dim(2)});
  const int64_t ni = first.image.numel(), nm = first.mask.numel();
  for (int64_t i = 0; i < b; ++i) {
    const auto& r = records[idx[static_cast<size_t>(i)]];
    if (r.image.numel() != ni || r.mask.numel() != nm) throw ShapeError("records in a batch differ in size");
    std::copy(r.image.data().begin(), r.image.data().end(), batch.images.ptr() + i * ni);
    std::copy(r.mask.data().begin(), r.mask.data().end(), batch.masks.ptr() + i * nm);
    batch.tokens.append(tokenize(r.caption, vocab, max_len));
  }
  return batch;
}

}  // namespace fmiseg
