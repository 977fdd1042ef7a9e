// Copyright (C) 2026 The linear-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "linear_kv/error.hpp"
#include "linear_kv/grid.hpp"
#include "linear_kv/kv_cache.hpp"
#include "linear_kv/linear_policy.hpp"
#include "linear_kv/rng.hpp"

namespace linear_kv {

/// k distinct entries of mid_idx drawn uniformly (partial Fisher-Yates), returned ascending.
inline std::vector<std::size_t> random_evict(std::span<const std::size_t> mid_idx, std::size_t k, std::uint64_t seed) {
    if (k > mid_idx.size()) {
        throw Error("insufficient-mid-tokens", "k=" + std::to_string(k) + " > " + std::to_string(mid_idx.size()));
    }
    std::vector<std::size_t> pool(mid_idx.begin(), mid_idx.end());
    Rng rng(seed);
    for (std::size_t i = 0; i < k; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

/**
 * @brief Raster positions a sink + sliding-window cache keeps after the end-of-line compression
 * of line `line` (1-based).
 *
 * After the final line nothing is compressed, so the set is line h-1's plus line h.
 * Sink: positions below n_init. Window: the most recent budget - w - n_init positions, leaving
 * the one-line buffer for the next line. Depends only on (cfg, spec, line).
 */
inline std::vector<std::size_t> streaming_retain(const BudgetConfig& cfg, const GridSpec& spec, std::size_t line) {
    const std::size_t generated = std::min(line, spec.h) * spec.w;
    std::vector<std::size_t> keep;
    if (cfg.compresses() && line >= spec.h && spec.h > cfg.budget_lines(spec)) {
        // no compression after the final line: previous retained set plus the last line
        keep = streaming_retain(cfg, spec, spec.h - 1);
        for (std::size_t p = (spec.h - 1) * spec.w; p < generated; ++p) {
            keep.push_back(p);
        }
        return keep;
    }
    if (!cfg.compresses() || line < cfg.budget_lines(spec) || line >= spec.h) {
        keep.resize(generated);
        for (std::size_t p = 0; p < generated; ++p) {
            keep[p] = p;
        }
        return keep;
    }
    const std::size_t sink = std::min(cfg.n_init, generated);
    const std::size_t window = cfg.budget >= spec.w + sink ? cfg.budget - spec.w - sink : 0;
    const std::size_t window_start = std::max(sink, generated - std::min(window, generated));
    for (std::size_t p = 0; p < sink; ++p) {
        keep.push_back(p);
    }
    for (std::size_t p = window_start; p < generated; ++p) {
        keep.push_back(p);
    }
    return keep;
}

/// H2O-style selection: bottom-k of accumulated attention within mid.
inline std::vector<std::size_t> h2o_evict(const HeadStore& store, std::span<const std::size_t> mid_idx, std::size_t k) {
    std::vector<std::size_t> mid_positions;
    mid_positions.reserve(mid_idx.size());
    for (const auto i : mid_idx) {
        mid_positions.push_back(store.positions[i]);
    }
    const auto pick = bottom_k(attacc_scores(store, mid_idx), k, mid_positions);
    std::vector<std::size_t> out;
    out.reserve(pick.size());
    for (const auto p : pick) {
        out.push_back(mid_idx[p]);
    }
    return out;
}

}  // namespace linear_kv
