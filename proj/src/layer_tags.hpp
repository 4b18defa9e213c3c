#pragma once

// Sub-seed tags for network construction. MoPE and MMoPE share the scheme so
// a single-task MMoPE reproduces the MoPE build bit for bit.

#include <cstdint>

namespace pufmoe::tags {

inline std::uint64_t expert(int k, int layer) {
  return static_cast<std::uint64_t>(k) * 4 + static_cast<std::uint64_t>(layer);
}

inline std::uint64_t gate(int task) {
  return 0x100000ull + static_cast<std::uint64_t>(task);
}

inline std::uint64_t tower(int task) {
  return 0x200000ull + static_cast<std::uint64_t>(task);
}

inline std::uint64_t head(int task) {
  return 0x300000ull + static_cast<std::uint64_t>(task);
}

}  // namespace pufmoe::tags
