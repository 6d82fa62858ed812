#pragma once

// Seed derivation for reproducible, order-independent random streams.

#include <cstdint>
#include <random>
#include <string_view>

namespace signl {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace detail {
inline std::uint64_t seed_part(std::uint64_t v) { return v; }
inline std::uint64_t seed_part(std::string_view s) { return fnv1a64(s); }
}  // namespace detail

// hash(seed, parts...) folded through splitmix64; parts may be integers or strings.
template <typename... Parts>
std::uint64_t derive_seed(std::uint64_t seed, const Parts&... parts) {
  std::uint64_t h = splitmix64(seed);
  ((h = splitmix64(h ^ detail::seed_part(parts))), ...);
  return h;
}

using Rng = std::mt19937_64;

}  // namespace signl
