// Copyright (C) 2026 The linear-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "linear_kv/attention.hpp"
#include "linear_kv/error.hpp"
#include "linear_kv/grid.hpp"
#include "linear_kv/kv_cache.hpp"
#include "linear_kv/linear_policy.hpp"
#include "linear_kv/matrix.hpp"
#include "linear_kv/model_config.hpp"
#include "linear_kv/policy.hpp"
#include "linear_kv/rng.hpp"
#include "linear_kv/trace.hpp"

namespace linear_kv {

struct LayerWeights {
    RowMatrix<Real> wq;    // width x width
    RowMatrix<Real> wk;    // kv_width x width
    RowMatrix<Real> wv;    // kv_width x width
    RowMatrix<Real> wo;    // width x width
    RowMatrix<Real> w_up;  // ffn x width
    RowMatrix<Real> w_down;// width x ffn
};

/**
 * @brief Seeded weights of the toy decoder.
 *
 * Drawn from Rng in a fixed order (embedding, then per layer wq wk wv wo w_up w_down, then the
 * unembedding), each entry uniform in [-a, a] with a = sqrt(3 / fan_in). The embedding has one
 * extra row, index `vocab`, used as the begin-of-image input.
 */
struct ToyWeights {
    RowMatrix<Real> embed;
    std::vector<LayerWeights> layers;
    RowMatrix<Real> unembed;

    static ToyWeights init(const ModelConfig& cfg) {
        cfg.validate();
        Rng rng(cfg.seed);
        auto draw = [&rng](std::size_t rows, std::size_t cols, Real bound) {
            RowMatrix<Real> m(rows, cols);
            for (auto& x : m.data()) {
                x = rng.uniform(-bound, bound);
            }
            return m;
        };
        auto fan = [](std::size_t fan_in) { return std::sqrt(Real{3} / static_cast<Real>(fan_in)); };

        ToyWeights w;
        const auto width = cfg.width();
        w.embed = draw(cfg.vocab + 1, width, std::sqrt(Real{3}));
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            LayerWeights lw;
            lw.wq = draw(width, width, fan(width));
            lw.wk = draw(cfg.kv_width(), width, fan(width));
            lw.wv = draw(cfg.kv_width(), width, fan(width));
            lw.wo = draw(width, width, fan(width));
            lw.w_up = draw(cfg.ffn_width(), width, fan(width));
            lw.w_down = draw(width, cfg.ffn_width(), fan(cfg.ffn_width()));
            w.layers.push_back(std::move(lw));
        }
        w.unembed = draw(cfg.vocab, width, fan(width));
        return w;
    }
};

namespace detail {
inline void matvec(const RowMatrix<Real>& m, std::span<const Real> x, std::span<Real> out) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        out[r] = dot<Real>(m.row(r), x);
    }
}

inline void rms_norm(std::span<const Real> x, std::span<Real> out) {
    Real ss = 0;
    for (const auto v : x) {
        ss += v * v;
    }
    const Real inv = Real{1} / std::sqrt(ss / static_cast<Real>(x.size()) + Real{1e-6});
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = x[i] * inv;
    }
}

inline Real silu(Real x) { return x / (Real{1} + std::exp(-x)); }

/// Greedy argmax; the smallest id wins ties.
inline std::size_t argmax(std::span<const Real> logits) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) {
            best = i;
        }
    }
    return best;
}
}  // namespace detail

struct DecodeOptions {
    bool record_attention = false;
    bool record_timings = true;
};

/**
 * @brief Live state of one generation stream.
 *
 * position always equals the number of emitted visual tokens.
 */
struct DecodeState {
    GridSpec grid;
    BudgetConfig budget;
    Policy policy;
    DecodeOptions options;

    std::size_t position = 0;
    VisualKVCache cache;
    GuideQueue guide;
    std::vector<Real> hidden;
    DecodeTrace trace;

    // scratch
    std::vector<Real> x, normed, q, k, v, att, proj, up, logits, weights;
};

class ToyDecoder {
public:
    explicit ToyDecoder(const ModelConfig& cfg) : m_cfg(cfg), m_weights(ToyWeights::init(cfg)) {}

    const ModelConfig& config() const noexcept { return m_cfg; }
    const ToyWeights& weights() const noexcept { return m_weights; }

    /// Encodes the conditional tokens into an immutable KV prefix at every layer / kv-head.
    DecodeState prefill(std::span<const std::size_t> cond_tokens, const GridSpec& grid, const BudgetConfig& budget,
                        const Policy& policy, const DecodeOptions& options = {}) const {
        if (cond_tokens.empty()) {
            throw Error("empty-condition");
        }
        for (const auto t : cond_tokens) {
            if (t >= m_cfg.vocab) {
                throw Error("invalid-token", std::to_string(t));
            }
        }
        if (policy.compresses()) {
            validate_budget(grid, budget, true);
        }

        DecodeState s;
        s.grid = grid;
        s.budget = budget;
        s.policy = policy;
        s.options = options;
        s.cache = VisualKVCache(m_cfg.layers, m_cfg.kv_heads, m_cfg.dim, policy.needs_history());
        s.guide = GuideQueue(m_cfg.layers, m_cfg.kv_heads, m_cfg.dim, grid.w, m_cfg.group());
        const auto width = m_cfg.width();
        s.x.resize(width);
        s.normed.resize(width);
        s.q.resize(width);
        s.k.resize(m_cfg.kv_width());
        s.v.resize(m_cfg.kv_width());
        s.att.resize(width);
        s.proj.resize(width);
        s.up.resize(m_cfg.ffn_width());
        s.logits.resize(m_cfg.vocab);

        s.trace.grid = grid;
        s.trace.budget = budget;
        s.trace.model = m_cfg;
        s.trace.policy = std::string(policy_name(policy.kind));
        s.trace.cond_tokens.assign(cond_tokens.begin(), cond_tokens.end());
        s.trace.attention_recorded = options.record_attention;

        for (const auto t : cond_tokens) {
            auto e = m_weights.embed.row(t);
            std::copy(e.begin(), e.end(), s.x.begin());
            for (std::size_t l = 0; l < m_cfg.layers; ++l) {
                layer_forward(s, l, [&](std::size_t kvh, std::span<const Real> k, std::span<const Real> v) {
                    s.cache.append_conditional(l, kvh, k, v);
                }, [](std::size_t, std::size_t, std::span<const Real>, std::span<const Real>) {});
            }
        }
        return s;
    }

    /**
     * @brief Generates the next visual token.
     *
     * Appends this token's KV at every layer, attends over [conditional | compacted visual],
     * emits the argmax token, and at a line end runs the policy's compression hook.
     */
    std::size_t decode_step(DecodeState& s) const {
        const std::size_t n = s.grid.tokens();
        if (s.position >= n) {
            throw Error("generation-complete");
        }
        const auto t0 = std::chrono::steady_clock::now();
        const std::size_t p = s.position;
        const std::size_t input = p == 0 ? m_cfg.vocab : s.trace.steps.back().token;
        auto e = m_weights.embed.row(input);
        std::copy(e.begin(), e.end(), s.x.begin());

        StepRecord rec;
        rec.step = p;
        rec.visual_len.resize(m_cfg.layers * m_cfg.kv_heads);
        const std::size_t cond = s.cache.cond_len();
        for (std::size_t l = 0; l < m_cfg.layers; ++l) {
            layer_forward(
                s, l,
                [&](std::size_t kvh, std::span<const Real> k, std::span<const Real> v) {
                    s.cache.append_token(l, kvh, k, v, p);
                    rec.visual_len[l * m_cfg.kv_heads + kvh] = s.cache.head(l, kvh).size();
                },
                [&](std::size_t qh, std::size_t kvh, std::span<const Real> q, std::span<const Real> w) {
                    s.guide.push(l, kvh, q);
                    const auto visual = w.subspan(cond);
                    s.cache.accumulate_history(l, kvh, visual);
                    if (s.options.record_attention) {
                        const auto& store = s.cache.head(l, kvh);
                        s.trace.attention.push_back({p, l, qh, std::vector<Real>(w.begin(), w.begin() + cond),
                                                     store.positions, std::vector<Real>(visual.begin(), visual.end())});
                    }
                });
        }

        s.hidden = s.x;
        detail::rms_norm(s.x, s.normed);
        detail::matvec(m_weights.unembed, s.normed, s.logits);
        for (const auto z : s.logits) {
            if (!std::isfinite(z)) {
                throw Error("non-finite-value", "logits at step " + std::to_string(p));
            }
        }
        rec.token = detail::argmax(s.logits);
        s.trace.steps.push_back(rec);
        ++s.position;

        if (s.position % s.grid.w == 0) {
            const std::size_t line = s.position / s.grid.w;
            std::size_t head_len = 0;
            for (const auto len : rec.visual_len) {
                head_len = std::max(head_len, len);
            }
            if (s.policy.compresses() && should_compress(s.budget, s.grid, line, head_len)) {
                s.trace.evictions.push_back(run_end_of_line(s.policy, s.cache, s.guide, s.grid, s.budget, line));
            }
            s.guide.clear();
        }
        if (s.options.record_timings) {
            const auto dt = std::chrono::steady_clock::now() - t0;
            s.trace.steps.back().step_ns =
                static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(dt).count());
        }
        return rec.token;
    }

    /// Full raster generation of grid.tokens() visual tokens.
    DecodeTrace generate(std::span<const std::size_t> cond_tokens, const GridSpec& grid, const BudgetConfig& budget,
                         const Policy& policy, const DecodeOptions& options = {}) const {
        auto s = prefill(cond_tokens, grid, budget, policy, options);
        s.trace.steps.reserve(grid.tokens());
        while (s.position < grid.tokens()) {
            decode_step(s);
        }
        s.trace.final_hidden = s.hidden;
        return std::move(s.trace);
    }

    /// Seeded conditional prompt of cfg.cond_len ids.
    static std::vector<std::size_t> make_condition(const ModelConfig& cfg, std::uint64_t seed) {
        Rng rng(mix_seed(seed, 0xC0DEull));
        std::vector<std::size_t> out(cfg.cond_len);
        for (auto& t : out) {
            t = static_cast<std::size_t>(rng.below(cfg.vocab));
        }
        return out;
    }

private:
    /**
     * One pre-norm block on s.x. `store_kv(kvh, k, v)` places the new KV pair; the query
     * head then attends over the cache. `observe(qh, kvh, q, weights)` sees each head's
     * query and attention row (visual decode only).
     */
    template <typename StoreKV, typename Observe>
    void layer_forward(DecodeState& s, std::size_t l, StoreKV&& store_kv, Observe&& observe) const {
        const auto& lw = m_weights.layers[l];
        const std::size_t d = m_cfg.dim;
        detail::rms_norm(s.x, s.normed);
        detail::matvec(lw.wq, s.normed, s.q);
        detail::matvec(lw.wk, s.normed, s.k);
        detail::matvec(lw.wv, s.normed, s.v);
        for (std::size_t kvh = 0; kvh < m_cfg.kv_heads; ++kvh) {
            store_kv(kvh, std::span<const Real>(s.k).subspan(kvh * d, d), std::span<const Real>(s.v).subspan(kvh * d, d));
        }
        const Real scale = default_scale<Real>(d);
        for (std::size_t qh = 0; qh < m_cfg.heads; ++qh) {
            const std::size_t kvh = qh / m_cfg.group();
            const auto blocks = s.cache.blocks(l, kvh);
            const auto q = std::span<const Real>(s.q).subspan(qh * d, d);
            attend_blocks<Real>(q, blocks, scale, std::span<Real>(s.att).subspan(qh * d, d), s.weights);
            observe(qh, kvh, q, std::span<const Real>(s.weights));
        }
        detail::matvec(lw.wo, s.att, s.proj);
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            s.x[i] += s.proj[i];
        }
        detail::rms_norm(s.x, s.normed);
        detail::matvec(lw.w_up, s.normed, s.up);
        for (auto& u : s.up) {
            u = detail::silu(u);
        }
        detail::matvec(lw.w_down, s.up, s.proj);
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            s.x[i] += s.proj[i];
        }
    }

    ModelConfig m_cfg;
    ToyWeights m_weights;
};

}  // namespace linear_kv
