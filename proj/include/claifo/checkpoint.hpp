#pragma once

// Checkpoint file format:
//   magic "CLAIFO-CKPT-1" (13 bytes), u32 block count,
//   per block: u16 name length, name bytes, u8 dtype (0 = f32),
//              u32 rows, u32 cols, rows·cols raw little-endian f32 values.
// All integers little-endian.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "claifo/autodiff.hpp"
#include "claifo/check.hpp"

namespace claifo {

constexpr char kCkptMagic[] = "CLAIFO-CKPT-1";
constexpr size_t kCkptMagicLen = 13;

namespace detail {

template <typename I>
void write_le(std::ostream& os, I v) {
  uint8_t buf[sizeof(I)];
  for (size_t i = 0; i < sizeof(I); ++i) buf[i] = static_cast<uint8_t>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), sizeof(I));
}

template <typename I>
I read_le(std::istream& is) {
  uint8_t buf[sizeof(I)];
  is.read(reinterpret_cast<char*>(buf), sizeof(I));
  I v = 0;
  for (size_t i = 0; i < sizeof(I); ++i) v |= static_cast<I>(buf[i]) << (8 * i);
  return v;
}

inline void write_f32_le(std::ostream& os, float f) {
  uint32_t u;
  std::memcpy(&u, &f, 4);
  write_le<uint32_t>(os, u);
}

inline float read_f32_le(std::istream& is) {
  const uint32_t u = read_le<uint32_t>(is);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const std::vector<Param<float>*>& params) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), "cannot open checkpoint for writing: ", path);
  os.write(kCkptMagic, kCkptMagicLen);
  detail::write_le<uint32_t>(os, static_cast<uint32_t>(params.size()));
  for (const Param<float>* p : params) {
    require(p->name.size() < 65536, "parameter name too long");
    detail::write_le<uint16_t>(os, static_cast<uint16_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    os.put(0);  // dtype f32
    detail::write_le<uint32_t>(os, static_cast<uint32_t>(p->value.rows()));
    detail::write_le<uint32_t>(os, static_cast<uint32_t>(p->value.cols()));
    for (Eigen::Index i = 0; i < p->value.rows(); ++i)
      for (Eigen::Index j = 0; j < p->value.cols(); ++j) detail::write_f32_le(os, p->value(i, j));
  }
  ensure(os.good(), "checkpoint write failed: ", path);
}

inline std::map<std::string, Mat<float>> load_checkpoint_blocks(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), "cannot open checkpoint: ", path);
  char magic[kCkptMagicLen];
  is.read(magic, kCkptMagicLen);
  require(is.good() && std::memcmp(magic, kCkptMagic, kCkptMagicLen) == 0,
          "not a checkpoint file (bad magic): ", path);
  const uint32_t n = detail::read_le<uint32_t>(is);
  std::map<std::string, Mat<float>> blocks;
  for (uint32_t b = 0; b < n; ++b) {
    const uint16_t len = detail::read_le<uint16_t>(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    const int dtype = is.get();
    require(dtype == 0, "unsupported dtype ", dtype, " in ", path);
    const uint32_t rows = detail::read_le<uint32_t>(is);
    const uint32_t cols = detail::read_le<uint32_t>(is);
    Mat<float> m(rows, cols);
    for (uint32_t i = 0; i < rows; ++i)
      for (uint32_t j = 0; j < cols; ++j) m(i, j) = detail::read_f32_le(is);
    require(is.good(), "truncated checkpoint: ", path);
    blocks.emplace(std::move(name), std::move(m));
  }
  return blocks;
}

// Load into existing params by name; every param must be present and
// shape-matched.
inline void load_checkpoint(const std::string& path, const std::vector<Param<float>*>& params) {
  const auto blocks = load_checkpoint_blocks(path);
  for (Param<float>* p : params) {
    const auto it = blocks.find(p->name);
    require(it != blocks.end(), "checkpoint ", path, " is missing parameter ", p->name);
    require(it->second.rows() == p->value.rows() && it->second.cols() == p->value.cols(),
            "checkpoint shape mismatch for ", p->name);
    p->value = it->second;
  }
}

}  // namespace claifo
