#pragma once

#include <cstdint>
#include <random>

namespace sdar {

// splitmix64 finalizer; used to derive independent stream seeds from
// (seed, indices) so corruption stays deterministic under any traversal order.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    return mix64(mix64(mix64(seed ^ a) + b) + c);
}

using Rng = std::mt19937_64;

// Uniform in [0, 1).
inline double rand_unit(Rng & rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace sdar
