// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The cslab Authors
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace cslab {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent child seeds from a run seed.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return mix_seed(mix_seed(mix_seed(seed) ^ a) ^ b);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
  std::uint64_t h = 1469598103934665603ULL; // FNV-1a
  for (char c : label)
    h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
  return derive_seed(seed, h);
}

/// Uniform in [0, 1) from the top 53 bits.
inline double uniform01(Rng &rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng &rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Uniform integer in [0, n).
inline std::size_t uniform_index(Rng &rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

inline double normal(Rng &rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

} // namespace cslab
