#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace amc {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent streams from a master seed.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Stream keyed by (seed, k0, k1, ...); independent of call timing.
inline Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
    std::uint64_t s = mix64(seed);
    for (std::uint64_t k : keys) {
        s = mix64(s ^ mix64(k + 0x632be59bd9b4e019ULL));
    }
    return Rng(s);
}

}  // namespace amc
