#pragma once

#include <cstdint>
#include <random>

namespace gcq {

// splitmix64 finalizer.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed of stream k derived from a master seed (counter-mode split).
inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t k) {
  return splitmix64(splitmix64(seed) ^ splitmix64(k + 0x632be59bd9b4e019ULL));
}

using Rng = std::mt19937_64;

}  // namespace gcq
