#pragma once

// Little-endian primitives shared by the on-disk formats (VFLO, VFEA, VWTC).

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "viewflow/error.hpp"

namespace viewflow::binary {

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void bytes(const void* data, std::size_t n) { out_.write(static_cast<const char*>(data), std::streamsize(n)); }
  void magic(const char (&m)[5]) { bytes(m, 4); }

  template <typename UInt>
  void uint(UInt v) {
    unsigned char buf[sizeof(UInt)];
    for (std::size_t i = 0; i < sizeof(UInt); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(buf, sizeof(UInt));
  }

  void floats(std::span<const float> values) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(values.data(), values.size() * sizeof(float));
    } else {
      for (float f : values) uint(std::bit_cast<std::uint32_t>(f));
    }
  }

  bool good() const { return bool(out_); }

 private:
  std::ostream& out_;
};

/// Reader that remembers its byte offset so format errors can point at it.
class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::size_t offset() const noexcept { return offset_; }

  void bytes(void* data, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(data), std::streamsize(n));
    if (std::size_t(in_.gcount()) != n)
      throw IntegrityError(std::string("truncated file while reading ") + what + " at byte " +
                               std::to_string(offset_ + std::size_t(in_.gcount())),
                           offset_ + std::size_t(in_.gcount()));
    offset_ += n;
  }

  void expect_magic(const char (&m)[5]) {
    char got[4];
    bytes(got, 4, "magic");
    for (std::size_t i = 0; i < 4; ++i)
      if (got[i] != m[i])
        throw IntegrityError(std::string("bad magic, expected \"") + m + "\" at byte " + std::to_string(i), i);
  }

  template <typename UInt>
  UInt uint(const char* what) {
    unsigned char buf[sizeof(UInt)];
    bytes(buf, sizeof(UInt), what);
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= UInt(buf[i]) << (8 * i);
    return v;
  }

  void floats(std::span<float> values, const char* what) {
    bytes(values.data(), values.size() * sizeof(float), what);
    if constexpr (std::endian::native != std::endian::little) {
      for (float& f : values) {
        std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
        bits = ((bits & 0xFF) << 24) | ((bits & 0xFF00) << 8) | ((bits >> 8) & 0xFF00) | (bits >> 24);
        f = std::bit_cast<float>(bits);
      }
    }
  }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& in_;
  std::size_t offset_ = 0;
};

}  // namespace viewflow::binary
