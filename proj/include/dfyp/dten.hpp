#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "dfyp/tensor.hpp"

namespace dfyp {
namespace dten {

// "DTEN" container: magic, version byte, dtype byte (0=f32, 1=f64), u8 rank,
// little-endian u32 extents, row-major little-endian payload.

constexpr std::uint8_t kVersion = 1;

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

template <class T>
constexpr std::uint8_t dtype_code() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? 0 : 1;
}

template <class T>
void save_raw(std::ostream& os, const Shape& shape, const T* data) {
  os.write("DTEN", 4);
  const std::uint8_t ver = kVersion, dt = dtype_code<T>(),
                     rank = static_cast<std::uint8_t>(shape.size());
  os.put(static_cast<char>(ver));
  os.put(static_cast<char>(dt));
  os.put(static_cast<char>(rank));
  for (int e : shape) write_u32(os, static_cast<std::uint32_t>(e));
  // Assumes a little-endian host (checked at load time via the header only).
  os.write(reinterpret_cast<const char*>(data),
           static_cast<std::streamsize>(numel(shape) * sizeof(T)));
}

template <class T>
void save(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  save_raw(os, t.shape(), t.data());
  if (!os) throw IoError("write failed for " + path.string());
}

template <class T>
Tensor<T> load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "DTEN", 4) != 0)
    throw IoError("bad DTEN magic in " + path.string());
  const int ver = is.get(), dt = is.get(), rank = is.get();
  if (ver != kVersion) throw IoError("unsupported DTEN version in " + path.string());
  if (dt != dtype_code<T>())
    throw IoError("dtype mismatch in " + path.string() + " (container dtype " +
                  std::to_string(dt) + ")");
  Shape shape(rank);
  for (int i = 0; i < rank; ++i) shape[i] = static_cast<int>(read_u32(is));
  Tensor<T> t = Tensor<T>::zeros(shape);
  is.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.size() * sizeof(T)));
  if (!is) throw IoError("truncated DTEN payload in " + path.string());
  return t;
}

// FNV-1a over file bytes; used for manifest checksums.
inline std::string file_checksum(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::uint64_t h = 1469598103934665603ULL;
  char buf[8192];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    const std::streamsize n = is.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
    if (!is) break;
  }
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
  return std::string(out);
}

}  // namespace dten
}  // namespace dfyp
