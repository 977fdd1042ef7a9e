// Copyright (C) 2026 The linear-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

namespace linear_kv {

/**
 * @brief Reproducible generator: std::mt19937_64 (sequence fixed by the standard) with a
 * hand-rolled 53-bit mapping to [0, 1). The std distributions are implementation-defined,
 * so none are used.
 */
class Rng {
public:
    static constexpr const char* algorithm = "mt19937_64/uniform53";

    explicit Rng(std::uint64_t seed) : m_engine(seed) {}

    std::uint64_t next_u64() { return m_engine(); }

    double uniform() { return static_cast<double>(m_engine() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Unbiased integer in [0, bound) by rejection.
    std::uint64_t below(std::uint64_t bound) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x = 0;
        do {
            x = m_engine();
        } while (x >= limit);
        return x % bound;
    }

private:
    std::mt19937_64 m_engine;
};

/// splitmix64 finalizer; derives independent child seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) { return mix_seed(mix_seed(a) ^ b); }

}  // namespace linear_kv
