#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace metawaf {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = kFnvOffset) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

/// Hash of a merged token sequence: FNV-1a 64 over the bytes of each token
/// followed by a 0x1F unit separator. Independent of platform endianness
/// and word size.
inline std::uint64_t sequence_hash(std::span<const std::string> tokens) {
  std::uint64_t h = kFnvOffset;
  for (const auto& t : tokens) {
    h = fnv1a64(t, h);
    h = fnv1a64(std::string_view("\x1f", 1), h);
  }
  return h;
}

}  // namespace metawaf
