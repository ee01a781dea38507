#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace ensgcv {

// splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based stream key: the same (master, path...) always yields the
/// same seed, independent of evaluation order.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = mix64(master);
  for (auto c : path) s = mix64(s ^ mix64(c + 0x632be59bd9b4e019ULL));
  return s;
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  return Rng(derive_seed(master, path));
}

}  // namespace ensgcv
