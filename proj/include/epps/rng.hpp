#pragma once

#include <array>
#include <cstdint>
#include <random>

namespace epps {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derive an independent seed for sub-stream (a, b) of a run seed. Chunks and
// positions get their own streams so output does not depend on scheduling.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(splitmix64(seed) ^ (a + 0x632be59bd9b4e019ULL)) ^
                    (b + 0x8cb92ba72f3d8dd7ULL));
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0) {
  const std::uint64_t s = derive_seed(seed, a, b);
  std::seed_seq seq{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return Rng(seq);
}

}  // namespace epps
