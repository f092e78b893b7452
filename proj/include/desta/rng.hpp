// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace desta {

/// Generator used for every sampling decision. std::mt19937_64 has a fully
/// specified output sequence, so draws are identical across platforms as long
/// as we avoid the implementation-defined std distributions.
using Rng = std::mt19937_64;

inline constexpr std::string_view kRngName = "mt19937_64";

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Stable 64-bit hash of an ordered pair.
constexpr std::uint64_t hash_pair(std::uint64_t a, std::uint64_t b) {
    return mix64(mix64(a) ^ (b + 0x632BE59BD9B4E019ULL));
}

/// FNV-1a over bytes, folded through mix64.
std::uint64_t hash_bytes(std::string_view bytes, std::uint64_t seed = 0);

/// Unbiased integer in [0, bound) by rejection sampling. bound must be > 0.
std::uint64_t uniform_index(Rng& rng, std::uint64_t bound);

/// Real in [0, 1) built from the top 53 bits of one draw.
double uniform_real(Rng& rng);

/// Box-Muller from two uniform_real draws; one draw pair per sample.
double standard_normal(Rng& rng);

/// Fisher-Yates with uniform_index.
template <typename T>
void shuffle(std::vector<T>& values, Rng& rng) {
    for (std::size_t i = values.size(); i > 1; --i) {
        std::size_t j = uniform_index(rng, i);
        std::swap(values[i - 1], values[j]);
    }
}

} // namespace desta
