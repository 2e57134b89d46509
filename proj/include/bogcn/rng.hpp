#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace bogcn {

using Rng = std::mt19937_64;

// The std:: distributions are implementation-defined, so every draw that
// feeds a reproducibility contract goes through these helpers instead.

/// Uniform double in [0, 1) from the top 53 bits.
inline double urand01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double urand(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * urand01(rng);
}

/// Unbiased integer in [0, n) via rejection sampling.
inline std::uint64_t rand_index(Rng& rng, std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do {
        r = rng();
    } while (r >= limit);
    return r % n;
}

template <typename T>
void shuffle_in_place(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rand_index(rng, i));
        std::swap(v[i - 1], v[j]);
    }
}

/// k distinct indices drawn uniformly from [0, n), in draw order.
inline std::vector<std::size_t> sample_without_replacement(Rng& rng,
                                                           std::size_t n,
                                                           std::size_t k) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    // partial Fisher-Yates: the first k slots are the sample
    for (std::size_t i = 0; i < k && i < n; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rand_index(rng, n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k < n ? k : n);
    return idx;
}

/// splitmix64 finalizer; used to derive independent seeds and hash mixes.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace bogcn
