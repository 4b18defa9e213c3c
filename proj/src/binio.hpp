#pragma once

// Little-endian stream helpers shared by the checkpoint writers.

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>

#include "pufmoe/errors.hpp"
#include "pufmoe/types.hpp"

namespace pufmoe::io {

inline void put_u8(std::ostream& os, std::uint8_t v) {
  os.put(static_cast<char>(v));
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(bytes, 8);
}

inline void put_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(os, bits);
}

inline std::uint8_t get_u8(std::istream& is) {
  const int byte = is.get();
  if (byte == std::char_traits<char>::eof()) {
    throw FormatError("truncated checkpoint", static_cast<std::uint64_t>(is.tellg()));
  }
  return static_cast<std::uint8_t>(byte);
}

inline std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(get_u8(is)) << (8 * i);
  }
  return v;
}

inline double get_f64(std::istream& is) {
  const std::uint64_t bits = get_u64(is);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

inline void put_block(std::ostream& os, const Scalar* data, Index size) {
  for (Index i = 0; i < size; ++i) put_f64(os, data[i]);
}

inline void get_block(std::istream& is, Scalar* data, Index size) {
  for (Index i = 0; i < size; ++i) data[i] = get_f64(is);
}

}  // namespace pufmoe::io
