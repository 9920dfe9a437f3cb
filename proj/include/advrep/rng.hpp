#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace advrep {

/// SplitMix64 finalizer.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Independent generator for a (seed, stream ids...) tuple. Training derives
/// every random draw from the run seed and the step/example it belongs to, so
/// a resumed run replays the same streams.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> streams = {}) {
    std::uint64_t h = mix64(seed);
    for (auto s : streams) h = mix64(h ^ mix64(s + 0x51ed270b27a1f4a5ULL));
    return std::mt19937_64(h);
}

}  // namespace advrep
