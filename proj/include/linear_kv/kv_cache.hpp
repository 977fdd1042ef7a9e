// Copyright (C) 2026 The linear-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "linear_kv/attention.hpp"
#include "linear_kv/error.hpp"
#include "linear_kv/grid.hpp"
#include "linear_kv/matrix.hpp"

namespace linear_kv {

/**
 * @brief Compacted visual KV entries of one (layer, kv-head).
 *
 * Entries are kept in raster order; `positions` holds each entry's original raster index.
 * `history` is the accumulated attention mass each entry has received, maintained only when the
 * owning cache tracks history (H2O / AttAcc scoring).
 */
struct HeadStore {
    std::vector<Real> keys;
    std::vector<Real> values;
    std::vector<std::size_t> positions;
    std::vector<Real> history;

    std::size_t size() const noexcept { return positions.size(); }
};

/// Store indices of the three regions, each ascending.
struct RegionPartition {
    std::vector<std::size_t> init_idx;
    std::vector<std::size_t> mid_idx;
    std::vector<std::size_t> rec_idx;
};

/**
 * @brief Per-layer, per-kv-head visual KV cache plus the immutable conditional prefix.
 *
 * The cache is ragged: every (layer, head) keeps its own index set. Compaction physically
 * removes entries.
 */
class VisualKVCache {
public:
    VisualKVCache() = default;

    VisualKVCache(std::size_t layers, std::size_t kv_heads, std::size_t dim, bool track_history = false)
        : m_layers(layers), m_kv_heads(kv_heads), m_dim(dim), m_track_history(track_history),
          m_visual(layers * kv_heads), m_cond_keys(layers * kv_heads), m_cond_values(layers * kv_heads) {}

    std::size_t layers() const noexcept { return m_layers; }
    std::size_t kv_heads() const noexcept { return m_kv_heads; }
    std::size_t dim() const noexcept { return m_dim; }
    std::size_t cond_len() const noexcept { return m_cond_len; }
    bool tracks_history() const noexcept { return m_track_history; }

    const HeadStore& head(std::size_t layer, std::size_t kv_head) const { return m_visual.at(slot(layer, kv_head)); }

    /// Appends one conditional entry. Only legal before any visual entry exists.
    void append_conditional(std::size_t layer, std::size_t kv_head, std::span<const Real> k, std::span<const Real> v) {
        check_vec(k, v);
        if (m_sealed) {
            throw Error("conditional-sealed", "conditional prefix is immutable once decoding starts");
        }
        const auto s = slot(layer, kv_head);
        m_cond_keys[s].insert(m_cond_keys[s].end(), k.begin(), k.end());
        m_cond_values[s].insert(m_cond_values[s].end(), v.begin(), v.end());
        m_cond_len = std::max(m_cond_len, m_cond_keys[s].size() / m_dim);
    }

    void append_token(std::size_t layer, std::size_t kv_head, std::span<const Real> k, std::span<const Real> v,
                      std::size_t position) {
        check_vec(k, v);
        auto& store = m_visual.at(slot(layer, kv_head));
        if (!store.positions.empty() && position <= store.positions.back()) {
            throw Error("position-regression", std::to_string(position) + " <= " +
                                                   std::to_string(store.positions.back()));
        }
        m_sealed = true;
        store.keys.insert(store.keys.end(), k.begin(), k.end());
        store.values.insert(store.values.end(), v.begin(), v.end());
        store.positions.push_back(position);
        if (m_track_history) {
            store.history.push_back(Real{0});
        }
    }

    /// Adds one step's attention row over the visual entries (aligned with store order) to history.
    void accumulate_history(std::size_t layer, std::size_t kv_head, std::span<const Real> visual_weights) {
        auto& store = m_visual.at(slot(layer, kv_head));
        if (!m_track_history) {
            return;
        }
        if (visual_weights.size() != store.size()) {
            throw Error("shape-mismatch", "history row length");
        }
        for (std::size_t i = 0; i < visual_weights.size(); ++i) {
            store.history[i] += visual_weights[i];
        }
    }

    /// Blocks to attend over: conditional prefix then compacted visual entries.
    std::array<KVBlock<Real>, 2> blocks(std::size_t layer, std::size_t kv_head) const {
        const auto s = slot(layer, kv_head);
        const auto& store = m_visual[s];
        return {KVBlock<Real>{m_cond_keys[s], m_cond_values[s], m_cond_keys[s].size() / m_dim},
                KVBlock<Real>{store.keys, store.values, store.size()}};
    }

    std::span<const Real> cond_keys(std::size_t layer, std::size_t kv_head) const { return m_cond_keys.at(slot(layer, kv_head)); }
    std::span<const Real> cond_values(std::size_t layer, std::size_t kv_head) const {
        return m_cond_values.at(slot(layer, kv_head));
    }

    /**
     * Removes the listed store entries. Every index must belong to part.mid_idx; anchors, the
     * recent window and the conditional prefix are protected.
     */
    void compact(std::size_t layer, std::size_t kv_head, const RegionPartition& part,
                 std::span<const std::size_t> evict_idx) {
        if (evict_idx.empty()) {
            return;
        }
        auto& store = m_visual.at(slot(layer, kv_head));
        std::vector<char> drop(store.size(), 0);
        for (const auto idx : evict_idx) {
            if (idx >= store.size()) {
                throw Error("invalid-eviction-index", std::to_string(idx));
            }
            if (!std::binary_search(part.mid_idx.begin(), part.mid_idx.end(), idx)) {
                throw Error("protected-region-eviction", "store index " + std::to_string(idx) + " (position " +
                                                             std::to_string(store.positions[idx]) + ")");
            }
            if (drop[idx]) {
                throw Error("invalid-eviction-index", "duplicate " + std::to_string(idx));
            }
            drop[idx] = 1;
        }

        std::size_t out = 0;
        for (std::size_t i = 0; i < store.size(); ++i) {
            if (drop[i]) {
                continue;
            }
            if (out != i) {
                std::copy_n(store.keys.begin() + i * m_dim, m_dim, store.keys.begin() + out * m_dim);
                std::copy_n(store.values.begin() + i * m_dim, m_dim, store.values.begin() + out * m_dim);
                store.positions[out] = store.positions[i];
                if (m_track_history) {
                    store.history[out] = store.history[i];
                }
            }
            ++out;
        }
        store.keys.resize(out * m_dim);
        store.values.resize(out * m_dim);
        store.positions.resize(out);
        if (m_track_history) {
            store.history.resize(out);
        }
    }

    /// Keys of the listed store entries as a row matrix.
    RowMatrix<Real> gather_keys(std::size_t layer, std::size_t kv_head, std::span<const std::size_t> idx) const {
        const auto& store = head(layer, kv_head);
        RowMatrix<Real> out(idx.size(), m_dim);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            std::copy_n(store.keys.begin() + idx[r] * m_dim, m_dim, out.row(r).begin());
        }
        return out;
    }

    std::size_t total_visual_entries() const {
        std::size_t n = 0;
        for (const auto& s : m_visual) {
            n += s.size();
        }
        return n;
    }

    /// Positions and per-head lengths; golden-trace friendly.
    nlohmann::json snapshot() const {
        nlohmann::json heads = nlohmann::json::array();
        for (std::size_t l = 0; l < m_layers; ++l) {
            for (std::size_t h = 0; h < m_kv_heads; ++h) {
                const auto& store = head(l, h);
                heads.push_back({{"layer", l}, {"head", h}, {"length", store.size()}, {"positions", store.positions}});
            }
        }
        return {{"layers", m_layers}, {"kv_heads", m_kv_heads}, {"dim", m_dim}, {"cond_len", m_cond_len}, {"heads", heads}};
    }

private:
    std::size_t slot(std::size_t layer, std::size_t kv_head) const {
        if (layer >= m_layers || kv_head >= m_kv_heads) {
            throw Error("invalid-head", "layer " + std::to_string(layer) + " head " + std::to_string(kv_head));
        }
        return layer * m_kv_heads + kv_head;
    }

    void check_vec(std::span<const Real> k, std::span<const Real> v) const {
        if (k.size() != m_dim || v.size() != m_dim) {
            throw Error("shape-mismatch", "kv entry width must equal head dim");
        }
    }

    std::size_t m_layers = 0;
    std::size_t m_kv_heads = 0;
    std::size_t m_dim = 0;
    std::size_t m_cond_len = 0;
    bool m_track_history = false;
    bool m_sealed = false;
    std::vector<HeadStore> m_visual;
    std::vector<std::vector<Real>> m_cond_keys;
    std::vector<std::vector<Real>> m_cond_values;
};

/**
 * @brief Splits a head's store into anchor / mid / recent regions at the end of line `line`
 * (1-based count of completed lines).
 *
 * init: position < n_init. rec: position >= (line - r) * w. mid: the rest.
 */
inline RegionPartition partition(const VisualKVCache& cache, std::size_t layer, std::size_t kv_head,
                                 const GridSpec& spec, const BudgetConfig& cfg, std::size_t line) {
    if (!cfg.compresses() || line < cfg.budget_lines(spec)) {
        throw Error("compression-not-active", "line " + std::to_string(line));
    }
    if (line > spec.h) {
        throw Error("position-out-of-grid", "line " + std::to_string(line));
    }
    const auto& store = cache.head(layer, kv_head);
    const std::size_t rec_start = line > cfg.recent_lines ? (line - cfg.recent_lines) * spec.w : 0;

    RegionPartition part;
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto pos = store.positions[i];
        if (pos < cfg.n_init) {
            part.init_idx.push_back(i);
        } else if (pos >= rec_start) {
            part.rec_idx.push_back(i);
        } else {
            part.mid_idx.push_back(i);
        }
    }
    return part;
}

}  // namespace linear_kv
