#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "fmiseg/numerics/tensor.hpp"

// Tensor archive ("FMT1"), all integers little-endian:
//
//   magic      4 bytes  "FMT1"
//   count      u32
//   count x {  name_len u16 | name (UTF-8, name_len bytes) | rank u8 | extents u32 x rank }
//   payloads   f32 x numel for each entry, in entry order
//
// Headers come first, payloads follow back to back.

namespace fmiseg {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

namespace archive_detail {

template <class T>
void put_le(std::string& buf, T v) {
  for (size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<char>((static_cast<uint64_t>(v) >> (8 * i)) & 0xFF));
}

inline uint32_t float_bits(float f) { return std::bit_cast<uint32_t>(f); }

class Reader {
 public:
  explicit Reader(const std::string& bytes) : b_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    uint64_t v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(b_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string bytes(size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == b_.size(); }

 private:
  void need(size_t n) const {
    if (pos_ + n > b_.size()) throw DataError("tensor archive truncated");
  }
  const std::string& b_;
  size_t pos_ = 0;
};

}  // namespace archive_detail

inline std::string encode_archive(const NamedTensors& entries) {
  using archive_detail::put_le;
  std::string buf = "FMT1";
  put_le<uint32_t>(buf, static_cast<uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    if (name.size() > 0xFFFF) throw ConfigError("archive entry name too long: " + name);
    if (t.rank() > 0xFF) throw ConfigError("archive entry rank too large: " + name);
    put_le<uint16_t>(buf, static_cast<uint16_t>(name.size()));
    buf += name;
    put_le<uint8_t>(buf, static_cast<uint8_t>(t.rank()));
    for (auto e : t.shape()) put_le<uint32_t>(buf, static_cast<uint32_t>(e));
  }
  for (const auto& entry : entries) {
    for (float v : entry.second.data()) put_le<uint32_t>(buf, archive_detail::float_bits(v));
  }
  return buf;
}

inline NamedTensors decode_archive(const std::string& bytes) {
  archive_detail::Reader in(bytes);
  if (in.bytes(4) != "FMT1") throw DataError("not a tensor archive (bad magic)");
  const auto count = in.get<uint32_t>();
  NamedTensors entries;
  std::vector<Shape> shapes;
  for (uint32_t i = 0; i < count; ++i) {
    const auto len = in.get<uint16_t>();
    std::string name = in.bytes(len);
    const auto rank = in.get<uint8_t>();
    Shape shape;
    for (uint8_t r = 0; r < rank; ++r) shape.push_back(in.get<uint32_t>());
    entries.emplace_back(std::move(name), Tensor());
    shapes.push_back(std::move(shape));
  }
  for (uint32_t i = 0; i < count; ++i) {
    Tensor t(shapes[i]);
    for (auto& v : t.data()) v = std::bit_cast<float>(in.get<uint32_t>());
    entries[i].second = std::move(t);
  }
  if (!in.at_end()) throw DataError("tensor archive has trailing bytes");
  return entries;
}

inline void save_archive(const std::string& path, const NamedTensors& entries) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  const std::string buf = encode_archive(entries);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw DataError("write failed: " + path);
}

inline NamedTensors load_archive(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_archive(buf);
}

}  // namespace fmiseg
