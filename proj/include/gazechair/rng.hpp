#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace gazechair {

using Rng = std::mt19937_64;

// splitmix64 finaliser; combines seed components into an independent stream seed.
constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2) + b * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t s = 0x853c49e6748fea9bULL;
    for (auto p : parts) s = mix_seed(s, p);
    return s;
}

}  // namespace gazechair
