// Copyright (C) 2026 The linear-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "linear_kv/error.hpp"
#include "linear_kv/matrix.hpp"
#include "linear_kv/trace.hpp"

namespace linear_kv {

/// Conditional vs. visual share of one attention row.
struct AttentionAllocation {
    Real cond_mass = 0;
    Real visual_mass = 0;
    Real cond_per_token = 0;
    Real visual_per_token = 0;
};

/// `row` is a full attention row whose first `cond_len` entries are conditional.
inline AttentionAllocation attention_allocation(std::span<const Real> row, std::size_t cond_len) {
    if (cond_len > row.size()) {
        throw Error("shape-mismatch", "cond_len exceeds row length");
    }
    Real total = 0;
    Real cond = 0;
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (!(row[i] >= 0) || !std::isfinite(row[i])) {
            throw Error("non-normalized-attention", "negative or non-finite weight");
        }
        total += row[i];
        if (i < cond_len) {
            cond += row[i];
        }
    }
    if (std::abs(total - Real{1}) > 1e-5) {
        throw Error("non-normalized-attention", "row sums to " + std::to_string(total));
    }
    AttentionAllocation a;
    a.cond_mass = cond;
    a.visual_mass = Real{1} - cond;
    const std::size_t m = row.size() - cond_len;
    a.cond_per_token = cond_len ? a.cond_mass / static_cast<Real>(cond_len) : 0;
    a.visual_per_token = m ? a.visual_mass / static_cast<Real>(m) : 0;
    return a;
}

inline AttentionAllocation attention_allocation(const AttentionRecord& rec) {
    std::vector<Real> row(rec.cond_weights);
    row.insert(row.end(), rec.weights.begin(), rec.weights.end());
    return attention_allocation(row, rec.cond_weights.size());
}

namespace detail {
inline void require_attention(const DecodeTrace& t) {
    if (!t.attention_recorded || t.attention.empty()) {
        throw Error("trace-missing-attention", "rerun with attention recording enabled");
    }
}

/// Mean over the line's steps of the attention (layer, head) placed on positions < prefix.
inline std::vector<Real> line_profile(const DecodeTrace& t, std::size_t layer, std::size_t head, std::size_t line,
                                      std::size_t prefix) {
    std::vector<Real> acc(prefix, Real{0});
    const std::size_t first = (line - 1) * t.grid.w;
    const std::size_t last = line * t.grid.w;
    std::size_t rows = 0;
    for (const auto& a : t.attention) {
        if (a.layer != layer || a.head != head || a.step < first || a.step >= last) {
            continue;
        }
        ++rows;
        for (std::size_t i = 0; i < a.positions.size(); ++i) {
            if (a.positions[i] < prefix) {
                acc[a.positions[i]] += a.weights[i];
            }
        }
    }
    if (rows != t.grid.w) {
        throw Error("trace-missing-attention", "line " + std::to_string(line) + " has " + std::to_string(rows) +
                                                   " attention rows for layer " + std::to_string(layer) +
                                                   " head " + std::to_string(head));
    }
    for (auto& v : acc) {
        v /= static_cast<Real>(rows);
    }
    return acc;
}
}  // namespace detail

inline Real cosine_similarity(std::span<const Real> a, std::span<const Real> b) {
    Real ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0 || bb == 0) {
        return 0;
    }
    return ab / (std::sqrt(aa) * std::sqrt(bb));
}

/**
 * @brief Cosine similarity of the mean attention of lines `line` and `line + 1` (1-based) over
 * the shared past: positions < (line - 1) * w.
 */
inline Real interline_similarity(const DecodeTrace& t, std::size_t layer, std::size_t head, std::size_t line) {
    detail::require_attention(t);
    if (line < 2 || line + 1 > t.grid.h) {
        throw Error("line-out-of-range", "need 2 <= line < h, got " + std::to_string(line));
    }
    const std::size_t prefix = (line - 1) * t.grid.w;
    const auto a = detail::line_profile(t, layer, head, line, prefix);
    const auto b = detail::line_profile(t, layer, head, line + 1, prefix);
    return cosine_similarity(a, b);
}

/// Attention mass by raster distance (query - key), with anchors (position < n_init) pooled.
struct LocalityProfile {
    Real anchor_mass = 0;
    std::vector<Real> by_distance;
    Real visual_mass = 0;
    std::size_t rows = 0;
};

inline LocalityProfile locality_profile(const DecodeTrace& t, std::size_t layer, std::size_t head) {
    detail::require_attention(t);
    LocalityProfile prof;
    prof.by_distance.assign(t.grid.tokens(), Real{0});
    for (const auto& a : t.attention) {
        if (a.layer != layer || a.head != head) {
            continue;
        }
        ++prof.rows;
        for (std::size_t i = 0; i < a.positions.size(); ++i) {
            const auto pos = a.positions[i];
            prof.visual_mass += a.weights[i];
            if (pos < t.budget.n_init) {
                prof.anchor_mass += a.weights[i];
            } else {
                prof.by_distance[a.step - pos] += a.weights[i];
            }
        }
    }
    if (prof.rows == 0) {
        throw Error("trace-missing-attention", "no rows for layer " + std::to_string(layer) + " head " +
                                                   std::to_string(head));
    }
    return prof;
}

/// allocation.csv: one row per recorded attention row.
inline void write_allocation_csv(std::ostream& os, const DecodeTrace& t) {
    detail::require_attention(t);
    os << "step,layer,head,cond_mass,visual_mass,cond_per_token,visual_per_token\n";
    for (const auto& a : t.attention) {
        const auto al = attention_allocation(a);
        os << a.step << ',' << a.layer << ',' << a.head << ',' << al.cond_mass << ',' << al.visual_mass << ','
           << al.cond_per_token << ',' << al.visual_per_token << '\n';
    }
}

/// interline.csv: one row per (layer, head, line).
inline void write_interline_csv(std::ostream& os, const DecodeTrace& t) {
    detail::require_attention(t);
    os << "layer,head,line,cosine\n";
    for (std::size_t l = 0; l < t.model.layers; ++l) {
        for (std::size_t h = 0; h < t.model.heads; ++h) {
            for (std::size_t line = 2; line + 1 <= t.grid.h; ++line) {
                os << l << ',' << h << ',' << line << ',' << interline_similarity(t, l, h, line) << '\n';
            }
        }
    }
}

/// locality.csv: per (layer, head), the anchor bucket then one bucket per distance.
inline void write_locality_csv(std::ostream& os, const DecodeTrace& t) {
    os << "layer,head,bucket,mass\n";
    for (std::size_t l = 0; l < t.model.layers; ++l) {
        for (std::size_t h = 0; h < t.model.heads; ++h) {
            const auto prof = locality_profile(t, l, h);
            os << l << ',' << h << ",anchor," << prof.anchor_mass << '\n';
            for (std::size_t dist = 0; dist < prof.by_distance.size(); ++dist) {
                if (prof.by_distance[dist] != 0) {
                    os << l << ',' << h << ',' << dist << ',' << prof.by_distance[dist] << '\n';
                }
            }
        }
    }
}

/// Per-layer means for plotting.
inline nlohmann::json analysis_summary(const DecodeTrace& t) {
    detail::require_attention(t);
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < t.model.layers; ++l) {
        Real cond = 0, vis_tok = 0, cond_tok = 0, sim = 0, anchor = 0, near = 0, visual = 0;
        std::size_t rows = 0, sims = 0;
        for (const auto& a : t.attention) {
            if (a.layer != l) {
                continue;
            }
            const auto al = attention_allocation(a);
            cond += al.cond_mass;
            cond_tok += al.cond_per_token;
            vis_tok += al.visual_per_token;
            ++rows;
        }
        for (std::size_t h = 0; h < t.model.heads; ++h) {
            for (std::size_t line = 2; line + 1 <= t.grid.h; ++line) {
                sim += interline_similarity(t, l, h, line);
                ++sims;
            }
            const auto prof = locality_profile(t, l, h);
            anchor += prof.anchor_mass;
            visual += prof.visual_mass;
            for (std::size_t dist = 0; dist <= t.grid.w && dist < prof.by_distance.size(); ++dist) {
                near += prof.by_distance[dist];
            }
        }
        layers.push_back({{"layer", l},
                          {"mean_cond_mass", rows ? cond / static_cast<Real>(rows) : 0},
                          {"mean_cond_per_token", rows ? cond_tok / static_cast<Real>(rows) : 0},
                          {"mean_visual_per_token", rows ? vis_tok / static_cast<Real>(rows) : 0},
                          {"mean_interline_similarity", sims ? sim / static_cast<Real>(sims) : 0},
                          {"anchor_share_of_visual", visual > 0 ? anchor / visual : 0},
                          {"within_one_line_share_of_visual", visual > 0 ? near / visual : 0}});
    }
    return {{"similarity_measure", "cosine"}, {"grid", to_string(t.grid)}, {"policy", t.policy}, {"config", t.config},
            {"layers", layers}};
}

}  // namespace linear_kv
