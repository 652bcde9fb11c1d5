#pragma once

// Deterministic seed derivation. Every randomized step owns a seed derived
// from a master seed and a string tag (study id, purpose, replicate index),
// so results are independent of evaluation order and thread scheduling.

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace transqr {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Splitmix chain over the tag bytes and an optional index.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                                 std::uint64_t index = 0) {
    std::uint64_t h = splitmix64(master);
    for (unsigned char c : tag) h = splitmix64(h ^ c);
    return splitmix64(h ^ index);
}

// Draw primitives are owned rather than taken from std::<distribution>s
// because those are implementation-defined; identical streams across
// toolchains keep fixtures and golden outputs portable.

// Uniform on [0,1) from the top 53 bits of the generator.
inline double uniform01(Rng& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

// Uniform on the open interval (0,1); safe inside tan/log arguments where the
// endpoints would overflow.
inline double uniform_open01(Rng& g) {
    return (static_cast<double>(g() >> 11) + 0.5) * 0x1.0p-53;
}

// Standard normal via Box-Muller (cosine branch). Two uniforms per draw; the
// first is offset into (0,1] so the log is finite.
inline double normal01(Rng& g) {
    const double u1 = (static_cast<double>(g() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform01(g);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

// Uniform integer in [0, n) by the multiply-high reduction. The O(n / 2^64)
// bias is irrelevant at the sizes used here.
inline std::size_t uniform_below(Rng& g, std::size_t n) {
    return static_cast<std::size_t>(
        (static_cast<unsigned __int128>(g()) * static_cast<unsigned __int128>(n)) >> 64);
}

}  // namespace transqr
