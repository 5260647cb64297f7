#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "srl/core/tensor.hpp"

namespace srl::core {

namespace io {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  write_u32(os, static_cast<std::uint32_t>(v));
  write_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline void write_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(os, bits);
}

inline void write_str(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint32_t read_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw IoError(std::string("truncated file while reading ") + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t read_u64(std::istream& is, const char* what) {
  std::uint64_t lo = read_u32(is, what);
  std::uint64_t hi = read_u32(is, what);
  return lo | (hi << 32);
}

inline float read_f32(std::istream& is, const char* what) {
  std::uint32_t bits = read_u32(is, what);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline std::string read_str(std::istream& is, const char* what) {
  std::uint32_t n = read_u32(is, what);
  if (n > (1u << 24)) throw IoError(std::string("implausible string length in ") + what);
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n))
    throw IoError(std::string("truncated file while reading ") + what);
  return s;
}

}  // namespace io

inline constexpr char kCheckpointMagic[9] = "SRLCKPT1";

/// Writes named parameters as 32-bit floats, then an optional free-form
/// text block (used for serialized configs). Byte layout in docs/FORMATS.md.
template <class S>
void save_checkpoint(const std::string& path,
                     const std::vector<const Variable<S>*>& params,
                     const std::string& text_block = "") {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kCheckpointMagic, 8);
  io::write_u32(os, 1);  // format version
  io::write_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    io::write_str(os, p->name);
    io::write_u32(os, static_cast<std::uint32_t>(p->value.shape.size()));
    for (int d : p->value.shape) io::write_u32(os, static_cast<std::uint32_t>(d));
    for (S v : p->value.data) io::write_f32(os, static_cast<float>(v));
  }
  io::write_str(os, text_block);
  if (!os) throw IoError("checkpoint write failed: " + path);
}

struct CheckpointRecord {
  std::string name;
  Tensor<float> value;
};

struct CheckpointContents {
  std::vector<CheckpointRecord> params;
  std::string text_block;
};

inline CheckpointContents read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw IoError("bad checkpoint magic in " + path);
  std::uint32_t version = io::read_u32(is, "version");
  if (version != 1)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  std::uint32_t count = io::read_u32(is, "param count");
  CheckpointContents out;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord rec;
    rec.name = io::read_str(is, "param name");
    std::uint32_t ndim = io::read_u32(is, "param rank");
    std::vector<int> shape(ndim);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = static_cast<int>(io::read_u32(is, "param dim"));
      numel *= static_cast<std::size_t>(d);
    }
    std::vector<float> data(numel);
    for (auto& v : data) v = io::read_f32(is, "param data");
    rec.value = Tensor<float>(std::move(shape), std::move(data));
    out.params.push_back(std::move(rec));
  }
  out.text_block = io::read_str(is, "text block");
  return out;
}

/// Loads checkpoint values into existing variables, matched by name; shapes
/// must agree. Returns the trailing text block.
template <class S>
std::string load_checkpoint(const std::string& path,
                            const std::vector<Variable<S>*>& params) {
  CheckpointContents c = read_checkpoint(path);
  for (auto* p : params) {
    const CheckpointRecord* found = nullptr;
    for (const auto& rec : c.params)
      if (rec.name == p->name) {
        found = &rec;
        break;
      }
    if (!found) throw IoError("checkpoint missing parameter '" + p->name + "'");
    if (found->value.shape != p->value.shape)
      throw ShapeError("checkpoint parameter '" + p->name + "' has shape " +
                       Tensor<float>::shape_string(found->value.shape) +
                       ", expected " + Tensor<float>::shape_string(p->value.shape));
    for (std::size_t i = 0; i < p->value.data.size(); ++i)
      p->value.data[i] = static_cast<S>(found->value.data[i]);
  }
  return c.text_block;
}

}  // namespace srl::core
