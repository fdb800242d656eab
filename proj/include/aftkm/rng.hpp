#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace aftkm {

// Every random quantity in the library draws from an mt19937_64 stream keyed
// by (master seed, stream id, index...).  The key is hashed through a
// splitmix64 chain, so streams for different purposes or replicate indices
// are statistically independent and a worker pool can hand replicate k its
// own generator without coordinating with anyone else.  Identical keys give
// identical streams regardless of worker count.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = 0x6a09e667f3bcc908ULL;
    for (std::uint64_t p : parts) h = splitmix64(h ^ p);
    return h;
}

// Stream ids; keep values stable, they are part of the reproducibility
// contract (same seed, same version -> same numbers).
enum class Stream : std::uint64_t {
    data_gen = 1,       // scenario generators
    slope_a = 2,        // perturbations for the estimating-function slope
    slope_b = 3,        // perturbations for the residual-score slope
    study = 4,          // per-replicate sub-master inside run_study
    oracle = 5,         // reserved for test-side Monte Carlo oracles
};

inline std::mt19937_64 make_stream(std::uint64_t master, Stream s, std::uint64_t index = 0) {
    return std::mt19937_64(mix_seed({master, static_cast<std::uint64_t>(s), index}));
}

}  // namespace aftkm
