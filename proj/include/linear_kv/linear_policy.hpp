// Copyright (C) 2026 The linear-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "linear_kv/attention.hpp"
#include "linear_kv/error.hpp"
#include "linear_kv/grid.hpp"
#include "linear_kv/kv_cache.hpp"
#include "linear_kv/matrix.hpp"

namespace linear_kv {

using SaliencyVector = std::vector<Real>;

/**
 * @brief Queries of the line currently being generated, per (layer, kv-head).
 *
 * With grouped-query attention every query head sharing a kv-head contributes its row, so a
 * full queue holds line_width * group rows.
 */
class GuideQueue {
public:
    GuideQueue() = default;
    GuideQueue(std::size_t layers, std::size_t kv_heads, std::size_t dim, std::size_t line_width, std::size_t group = 1)
        : m_layers(layers), m_kv_heads(kv_heads), m_dim(dim), m_line_width(line_width), m_group(group),
          m_rows(layers * kv_heads) {
        for (auto& r : m_rows) {
            r.reserve(line_width * group * dim);
        }
    }

    void push(std::size_t layer, std::size_t kv_head, std::span<const Real> q) {
        if (q.size() != m_dim) {
            throw Error("shape-mismatch", "guide query width");
        }
        auto& rows = m_rows.at(layer * m_kv_heads + kv_head);
        if (rows.size() / m_dim >= m_line_width * m_group) {
            throw Error("guide-queue-overflow", "more than one line of queries");
        }
        rows.insert(rows.end(), q.begin(), q.end());
    }

    std::size_t size(std::size_t layer, std::size_t kv_head) const {
        return m_rows.at(layer * m_kv_heads + kv_head).size() / m_dim;
    }
    std::size_t capacity() const noexcept { return m_line_width * m_group; }
    std::size_t line_width() const noexcept { return m_line_width; }

    RowMatrix<Real> rows(std::size_t layer, std::size_t kv_head) const {
        const auto& r = m_rows.at(layer * m_kv_heads + kv_head);
        return RowMatrix<Real>(r.size() / m_dim, m_dim, r);
    }

    void clear() {
        for (auto& r : m_rows) {
            r.clear();
        }
    }

private:
    std::size_t m_layers = 0;
    std::size_t m_kv_heads = 0;
    std::size_t m_dim = 0;
    std::size_t m_line_width = 0;
    std::size_t m_group = 1;
    std::vector<std::vector<Real>> m_rows;
};

/**
 * @brief Mean attention each mid key receives from the guide queries.
 *
 * S = (1/rows) * 1^T softmax(Q_guide K_mid^T / sqrt(d)), softmax taken over the mid keys only.
 */
inline SaliencyVector saliency(const RowMatrix<Real>& guide, const RowMatrix<Real>& mid_keys) {
    if (guide.rows() == 0) {
        throw Error("guide-queue-empty");
    }
    if (mid_keys.rows() == 0) {
        throw Error("empty-mid-region");
    }
    if (guide.cols() != mid_keys.cols()) {
        throw Error("shape-mismatch", "guide and key widths differ");
    }
    require_finite(guide, "guide queries");
    require_finite(mid_keys, "mid keys");

    const std::size_t m = mid_keys.rows();
    const Real scale = default_scale<Real>(guide.cols());
    SaliencyVector scores(m, Real{0});
    std::vector<Real> logits(m);
    for (std::size_t r = 0; r < guide.rows(); ++r) {
        scaled_dots<Real>(guide.row(r), mid_keys.data().data(), m, scale, logits.data());
        softmax_inplace(std::span<Real>(logits));
        for (std::size_t j = 0; j < m; ++j) {
            scores[j] += logits[j];
        }
    }
    const Real inv = Real{1} / static_cast<Real>(guide.rows());
    for (auto& s : scores) {
        s *= inv;
    }
    return scores;
}

/**
 * @brief Indices of the k smallest scores, ascending by index.
 *
 * Ties go to the smaller raster position (the older token is evicted first). `positions`
 * defaults to index order, which is raster order for a compacted store.
 */
inline std::vector<std::size_t> bottom_k(std::span<const Real> scores, std::size_t k,
                                         std::span<const std::size_t> positions = {}) {
    if (k > scores.size()) {
        throw Error("insufficient-mid-tokens", "k=" + std::to_string(k) + " > " + std::to_string(scores.size()));
    }
    if (!positions.empty() && positions.size() != scores.size()) {
        throw Error("shape-mismatch", "positions must align with scores");
    }
    for (const auto s : scores) {
        if (!std::isfinite(s)) {
            throw Error("non-finite-value", "score");
        }
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto pos = [&](std::size_t i) { return positions.empty() ? i : positions[i]; };
    const auto less = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) {
            return scores[a] < scores[b];
        }
        return pos(a) < pos(b);
    };
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), less);
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

/// End-of-line test for the completed line `line` (1-based).
inline bool should_compress(const BudgetConfig& cfg, const GridSpec& spec, std::size_t line, std::size_t head_len) {
    return cfg.compresses() && head_len >= cfg.budget && line < spec.h;
}

/// Accumulated attention restricted to the mid region (AttAcc / H2O scoring).
inline SaliencyVector attacc_scores(const HeadStore& store, std::span<const std::size_t> mid_idx) {
    if (store.history.size() != store.size()) {
        throw Error("history-not-tracked");
    }
    SaliencyVector out;
    out.reserve(mid_idx.size());
    for (const auto i : mid_idx) {
        out.push_back(store.history[i]);
    }
    return out;
}

enum class Scoring {
    inter_line,   // guide-queue saliency
    accumulated,  // AttAcc: accumulated attention history
    oldest_first, // no mid selection: the w oldest mid entries go
};

struct HeadEviction {
    std::size_t layer = 0;
    std::size_t head = 0;
    std::vector<std::size_t> evicted_positions;
};

struct EvictionReport {
    std::size_t line = 0;
    std::vector<HeadEviction> heads;
};

namespace detail {
inline std::vector<std::size_t> positions_of(const HeadStore& store, std::span<const std::size_t> idx) {
    std::vector<std::size_t> out;
    out.reserve(idx.size());
    for (const auto i : idx) {
        out.push_back(store.positions[i]);
    }
    return out;
}
}  // namespace detail

/**
 * @brief Progressive end-of-line compression over every (layer, kv-head).
 *
 * For each head: partition into anchor / mid / recent, score mid, evict the w least salient mid
 * entries and compact. Afterwards every head holds budget - w visual entries.
 */
inline EvictionReport compress_end_of_line(VisualKVCache& cache, const GuideQueue& guide, const GridSpec& spec,
                                           const BudgetConfig& cfg, std::size_t line,
                                           Scoring scoring = Scoring::inter_line) {
    EvictionReport report;
    report.line = line;
    for (std::size_t l = 0; l < cache.layers(); ++l) {
        for (std::size_t h = 0; h < cache.kv_heads(); ++h) {
            const auto part = partition(cache, l, h, spec, cfg, line);
            if (part.mid_idx.size() < spec.w) {
                throw Error("insufficient-mid-tokens", "mid holds " + std::to_string(part.mid_idx.size()) +
                                                           " < w=" + std::to_string(spec.w));
            }
            const auto& store = cache.head(l, h);
            const auto mid_positions = detail::positions_of(store, part.mid_idx);

            std::vector<std::size_t> pick;
            switch (scoring) {
            case Scoring::inter_line: {
                if (guide.size(l, h) != guide.capacity()) {
                    throw Error("guide-queue-empty", "guide queue holds " + std::to_string(guide.size(l, h)) +
                                                         " rows, expected " + std::to_string(guide.capacity()));
                }
                const auto scores = saliency(guide.rows(l, h), cache.gather_keys(l, h, part.mid_idx));
                pick = bottom_k(scores, spec.w, mid_positions);
                break;
            }
            case Scoring::accumulated:
                pick = bottom_k(attacc_scores(store, part.mid_idx), spec.w, mid_positions);
                break;
            case Scoring::oldest_first:
                pick.resize(spec.w);
                std::iota(pick.begin(), pick.end(), std::size_t{0});
                break;
            }

            std::vector<std::size_t> evict_idx;
            evict_idx.reserve(pick.size());
            for (const auto p : pick) {
                evict_idx.push_back(part.mid_idx[p]);
            }
            report.heads.push_back({l, h, detail::positions_of(store, evict_idx)});
            cache.compact(l, h, part, evict_idx);
        }
    }
    return report;
}

}  // namespace linear_kv
