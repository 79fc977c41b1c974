#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "sibcl/core/error.hpp"

namespace sibcl::io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(std::string& buf, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(const unsigned char* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
  return v;
}

inline void put_f64(std::string& buf, double d) { put_le(buf, std::bit_cast<std::uint64_t>(d)); }
inline double get_f64(const unsigned char* p) { return std::bit_cast<double>(get_le<std::uint64_t>(p)); }

inline std::string encode_f64(std::span<const double> xs) {
  std::string out;
  out.reserve(xs.size() * 8);
  for (double d : xs) put_f64(out, d);
  return out;
}

inline std::uint32_t crc32_of(std::string_view bytes) {
  uLong c = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
  std::size_t left = bytes.size();
  while (left > 0) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
    c = crc32(c, p, n);
    p += n;
    left -= n;
  }
  return static_cast<std::uint32_t>(c);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("short write to '" + path + "'");
}

// Framed container: 4-byte magic, u16 version, u32 header length, JSON
// header text, raw payload.
struct Frame {
  std::uint16_t version = 0;
  std::string header;
  std::string payload;
};

inline std::string pack_frame(std::string_view magic, std::uint16_t version, const std::string& header,
                              const std::string& payload) {
  std::string out(magic);
  put_le<std::uint16_t>(out, version);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  out += payload;
  return out;
}

inline Frame unpack_frame(std::string_view magic, const std::string& bytes, const std::string& what) {
  if (bytes.size() < magic.size() + 6 || bytes.compare(0, magic.size(), magic) != 0)
    throw IntegrityError(what + ": bad magic, expected '" + std::string(magic) + "'");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + magic.size();
  Frame f;
  f.version = get_le<std::uint16_t>(p);
  const std::uint32_t hlen = get_le<std::uint32_t>(p + 2);
  const std::size_t start = magic.size() + 6;
  if (bytes.size() - start < hlen) throw IntegrityError(what + ": truncated header");
  f.header = bytes.substr(start, hlen);
  f.payload = bytes.substr(start + hlen);
  return f;
}

}  // namespace sibcl::io
