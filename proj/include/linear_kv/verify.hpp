// Copyright (C) 2026 The linear-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "linear_kv/attention.hpp"
#include "linear_kv/baselines.hpp"
#include "linear_kv/decoder.hpp"
#include "linear_kv/grid.hpp"
#include "linear_kv/linear_policy.hpp"
#include "linear_kv/oracles.hpp"
#include "linear_kv/policy.hpp"
#include "linear_kv/rng.hpp"
#include "linear_kv/trace.hpp"

namespace linear_kv::verify {

struct SuiteResult {
    std::string name;
    bool passed = true;
    std::size_t cases = 0;
    double max_error = 0;
    std::string detail;
};

namespace detail {
inline RowMatrix<Real> random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
    RowMatrix<Real> m(rows, cols);
    for (auto& x : m.data()) {
        x = rng.uniform(-scale, scale);
    }
    return m;
}

inline oracle::Mat to_rows(const RowMatrix<Real>& m) {
    oracle::Mat out;
    for (std::size_t r = 0; r < m.rows(); ++r) {
        out.emplace_back(m.row(r).begin(), m.row(r).end());
    }
    return out;
}

inline void fail(SuiteResult& r, const std::string& why) {
    if (r.passed) {
        r.detail = why;
    }
    r.passed = false;
}
}  // namespace detail

/// attention() against the double-loop oracle.
inline SuiteResult attention_suite(std::size_t instances, std::uint64_t seed, double tol = 1e-6) {
    SuiteResult r;
    r.name = "attention-kernel";
    Rng rng(seed);
    for (std::size_t i = 0; i < instances; ++i) {
        const std::size_t d = 1 + rng.below(32);
        const std::size_t m = 1 + rng.below(64);
        const auto q = detail::random_matrix(rng, 1, d, 3.0);
        const auto k = detail::random_matrix(rng, m, d, 3.0);
        const auto v = detail::random_matrix(rng, m, d, 3.0);
        const auto got = attention(q, k, v);
        const auto want = oracle::attention(detail::to_rows(q)[0], detail::to_rows(k), detail::to_rows(v));
        for (std::size_t c = 0; c < d; ++c) {
            r.max_error = std::max(r.max_error, std::abs(got(0, c) - want[c]));
        }
        ++r.cases;
    }
    if (r.max_error > tol) {
        detail::fail(r, "max abs error above tolerance");
    }
    return r;
}

/// saliency() against per-query softmax-then-average (w <= 16, m <= 64, d <= 32).
inline SuiteResult saliency_suite(std::size_t instances, std::uint64_t seed, double tol = 1e-6) {
    SuiteResult r;
    r.name = "saliency";
    Rng rng(seed);
    for (std::size_t i = 0; i < instances; ++i) {
        const std::size_t w = 1 + rng.below(16);
        const std::size_t m = 1 + rng.below(64);
        const std::size_t d = 1 + rng.below(32);
        const double spread = rng.uniform(0.1, 4.0);
        const auto guide = detail::random_matrix(rng, w, d, spread);
        const auto keys = detail::random_matrix(rng, m, d, spread);
        const auto got = saliency(guide, keys);
        const auto want = oracle::saliency(detail::to_rows(guide), detail::to_rows(keys));
        double sum = 0;
        for (std::size_t j = 0; j < m; ++j) {
            r.max_error = std::max(r.max_error, std::abs(got[j] - want[j]));
            sum += got[j];
            if (got[j] < 0 || got[j] > 1) {
                detail::fail(r, "score outside [0, 1]");
            }
        }
        if (std::abs(sum - 1.0) > 1e-5) {
            detail::fail(r, "scores do not sum to 1");
        }
        ++r.cases;
    }
    if (r.max_error > tol) {
        detail::fail(r, "max abs error above tolerance");
    }
    return r;
}

/// bottom_k() against a full sort with the older-first tie-break, half the cases heavily tied.
inline SuiteResult bottom_k_suite(std::size_t instances, std::uint64_t seed) {
    SuiteResult r;
    r.name = "bottom-k";
    Rng rng(seed);
    for (std::size_t i = 0; i < instances; ++i) {
        const std::size_t m = 1 + rng.below(80);
        const std::size_t k = rng.below(m + 1);
        const bool ties = i % 2 == 0;
        const std::size_t levels = 1 + rng.below(3);
        std::vector<Real> scores(m);
        std::vector<std::size_t> positions(m);
        std::size_t pos = rng.below(5);
        for (std::size_t j = 0; j < m; ++j) {
            scores[j] = ties ? static_cast<Real>(rng.below(levels)) / 8.0 : rng.uniform();
            positions[j] = pos;
            pos += 1 + rng.below(4);
        }
        if (bottom_k(scores, k, positions) != oracle::bottom_k(scores, positions, k)) {
            detail::fail(r, "selection differs from sort oracle (m=" + std::to_string(m) + ", k=" + std::to_string(k) + ")");
        }
        ++r.cases;
    }
    return r;
}

/**
 * @brief Checks a run's trace against the budget contract: per-head visual length <= B at
 * every step, exactly w evictions per head per event, and B - w right after every event.
 * Returns a description of the first violation.
 */
inline std::optional<std::string> check_budget(const DecodeTrace& t) {
    const auto& b = t.budget;
    const std::size_t w = t.grid.w;
    const bool compressing = t.policy != "full" && b.compresses();
    for (const auto& s : t.steps) {
        for (const auto len : s.visual_len) {
            if (compressing && len > b.budget) {
                return "step " + std::to_string(s.step) + ": head length " + std::to_string(len) + " > B";
            }
        }
    }
    for (const auto& e : t.evictions) {
        if (e.heads.size() != t.model.layers * t.model.kv_heads) {
            return "line " + std::to_string(e.line) + ": report does not cover every head";
        }
        for (const auto& h : e.heads) {
            if (h.evicted_positions.size() != w) {
                return "line " + std::to_string(e.line) + ": evicted " + std::to_string(h.evicted_positions.size()) +
                       " != w";
            }
        }
        // the next step attends over the compacted store plus its own new entry
        const std::size_t next = e.line * w;
        if (next < t.steps.size()) {
            for (const auto len : t.steps[next].visual_len) {
                if (len != b.budget - w + 1) {
                    return "line " + std::to_string(e.line) + ": post-compression length " + std::to_string(len - 1) +
                           " != B - w";
                }
            }
        }
    }
    return std::nullopt;
}

/// No evicted position is an anchor (< n_init) or inside the recent window at its event.
inline std::optional<std::string> check_protected(const DecodeTrace& t) {
    const auto& b = t.budget;
    for (const auto& e : t.evictions) {
        const std::size_t rec_start = e.line > b.recent_lines ? (e.line - b.recent_lines) * t.grid.w : 0;
        for (const auto& h : e.heads) {
            for (const auto p : h.evicted_positions) {
                if (p < b.n_init) {
                    return "anchor position " + std::to_string(p) + " evicted at line " + std::to_string(e.line);
                }
                if (p >= rec_start) {
                    return "recent-window position " + std::to_string(p) + " evicted at line " + std::to_string(e.line);
                }
            }
        }
    }
    return std::nullopt;
}

/// Seeded small model shapes used by the equivalence and randomized-run suites.
inline std::vector<ModelConfig> model_sizes() {
    ModelConfig tiny;
    tiny.layers = 1;
    tiny.heads = 1;
    tiny.kv_heads = 1;
    tiny.dim = 8;
    tiny.vocab = 32;
    tiny.cond_len = 3;
    ModelConfig gqa;
    gqa.layers = 2;
    gqa.heads = 4;
    gqa.kv_heads = 2;
    gqa.dim = 8;
    gqa.vocab = 64;
    gqa.cond_len = 5;
    ModelConfig wide;
    wide.layers = 3;
    wide.heads = 2;
    wide.kv_heads = 2;
    wide.dim = 16;
    wide.vocab = 128;
    wide.cond_len = 8;
    return {tiny, gqa, wide};
}

/**
 * @brief Full-cache equivalence: policy "full" and LineAR at rho = 1 both reproduce the
 * cache-free reference decoder's tokens, with final hidden states within tol.
 */
inline SuiteResult full_cache_suite(std::size_t seeds, const GridSpec& grid, double tol = 1e-6) {
    SuiteResult r;
    r.name = "full-cache-equivalence";
    for (auto model : model_sizes()) {
        for (std::size_t s = 0; s < seeds; ++s) {
            model.seed = s;
            const ToyDecoder dec(model);
            const auto cond = ToyDecoder::make_condition(model, s);
            const auto budget = budget_from_ratio(grid, Rational(1, 1));
            const auto ref = oracle::reference_generate(model, dec.weights(), cond, grid.tokens());
            for (const auto kind : {PolicyKind::full, PolicyKind::lineattn}) {
                Policy p;
                p.kind = kind;
                const auto t = dec.generate(cond, grid, budget, p, {false, false});
                if (t.tokens() != ref.tokens) {
                    detail::fail(r, std::string(policy_name(kind)) + " tokens differ (seed " + std::to_string(s) + ")");
                }
                if (!t.evictions.empty()) {
                    detail::fail(r, "rho = 1 run evicted");
                }
                for (std::size_t i = 0; i < ref.final_hidden.size(); ++i) {
                    r.max_error = std::max(r.max_error, std::abs(t.final_hidden[i] - ref.final_hidden[i]));
                }
                ++r.cases;
            }
        }
    }
    if (r.max_error > tol) {
        detail::fail(r, "hidden-state error above tolerance");
    }
    return r;
}

/// A random valid (grid, rho, n_init, r) with compression active.
struct RandomSetup {
    GridSpec grid;
    BudgetConfig budget;
};

inline RandomSetup random_setup(Rng& rng) {
    while (true) {
        const std::size_t h = 3 + rng.below(8);
        const std::size_t w = 2 + rng.below(7);
        const GridSpec grid = make_grid(h, w);
        const std::size_t budget_lines = 2 + rng.below(h - 2);  // < h so compression fires
        if (budget_lines >= h) {
            continue;
        }
        const std::size_t n_init = 1 + rng.below(2 * w);
        const std::size_t recent = 1 + rng.below(3);
        BudgetOverrides ov;
        ov.n_init = n_init;
        ov.recent_lines = recent;
        try {
            return {grid, budget_from_ratio(grid, Rational(budget_lines, h), ov)};
        } catch (const Error&) {
            continue;
        }
    }
}

/// Randomized runs of every compressing policy checked for budget and protected-region violations.
inline SuiteResult randomized_runs_suite(std::size_t configs, std::uint64_t seed, bool protected_only = false) {
    SuiteResult r;
    r.name = protected_only ? "protected-regions" : "budget-bound";
    Rng rng(seed);
    const auto models = model_sizes();
    const PolicyKind kinds[] = {PolicyKind::lineattn, PolicyKind::attacc, PolicyKind::h2o, PolicyKind::random,
                                PolicyKind::streaming};
    for (std::size_t i = 0; i < configs; ++i) {
        const auto setup = random_setup(rng);
        auto model = models[i % models.size()];
        model.seed = rng.next_u64();
        const ToyDecoder dec(model);
        const auto cond = ToyDecoder::make_condition(model, model.seed);
        Policy p;
        p.kind = kinds[i % 5];
        p.seed = model.seed;
        const auto t = dec.generate(cond, setup.grid, setup.budget, p, {false, false});
        const auto violation = protected_only ? check_protected(t) : check_budget(t);
        if (violation) {
            detail::fail(r, to_string(setup.grid) + " rho=" + setup.budget.rho.str() + " " + std::string(policy_name(p.kind)) +
                                ": " + *violation);
        }
        const std::size_t expected_events = setup.grid.h - setup.budget.budget_lines(setup.grid);
        if (t.evictions.size() != expected_events) {
            detail::fail(r, "unexpected number of compression events");
        }
        ++r.cases;
    }
    return r;
}

/// Streaming policy keeps exactly streaming_retain() after every line, independent of weights.
inline SuiteResult streaming_suite(std::size_t configs, std::uint64_t seed) {
    SuiteResult r;
    r.name = "streaming-exactness";
    Rng rng(seed);
    for (std::size_t i = 0; i < configs; ++i) {
        const auto setup = random_setup(rng);
        std::vector<std::vector<std::size_t>> first_run;
        for (std::size_t rep = 0; rep < 3; ++rep) {
            auto model = model_sizes()[rep];
            model.seed = rng.next_u64();
            const ToyDecoder dec(model);
            const auto cond = ToyDecoder::make_condition(model, model.seed);
            Policy p;
            p.kind = PolicyKind::streaming;
            auto s = dec.prefill(cond, setup.grid, setup.budget, p, {false, false});
            std::vector<std::vector<std::size_t>> retained;
            while (s.position < setup.grid.tokens()) {
                dec.decode_step(s);
                if (s.position % setup.grid.w != 0) {
                    continue;
                }
                const auto line = s.position / setup.grid.w;
                const auto want = streaming_retain(setup.budget, setup.grid, line);
                for (std::size_t l = 0; l < model.layers; ++l) {
                    for (std::size_t h = 0; h < model.kv_heads; ++h) {
                        if (s.cache.head(l, h).positions != want) {
                            detail::fail(r, to_string(setup.grid) + " line " + std::to_string(line) +
                                                ": retained set differs from closed form");
                        }
                    }
                }
                retained.push_back(s.cache.head(0, 0).positions);
            }
            if (rep == 0) {
                first_run = retained;
            } else if (retained != first_run) {
                detail::fail(r, "retained set depends on model weights");
            }
        }
        ++r.cases;
    }
    return r;
}

/// AttAcc history equals the re-summation of the stored per-step attention rows.
inline SuiteResult accumulated_attention_suite(std::size_t seeds, double tol = 1e-6) {
    SuiteResult r;
    r.name = "accumulated-attention";
    const GridSpec grid = make_grid(6, 4);
    for (std::size_t s = 0; s < seeds; ++s) {
        auto model = model_sizes()[s % 3];
        model.seed = s;
        const ToyDecoder dec(model);
        const auto cond = ToyDecoder::make_condition(model, s);
        Policy p;
        p.kind = PolicyKind::attacc;
        BudgetOverrides ov;
        ov.n_init = 2;
        ov.recent_lines = 1;
        const auto budget = budget_from_ratio(grid, Rational(4, 6), ov);
        auto st = dec.prefill(cond, grid, budget, p, {true, false});
        // stop after three lines, before any compression
        while (st.position < 3 * grid.w) {
            dec.decode_step(st);
        }
        const auto sums = oracle::accumulated_attention(st.trace);
        for (std::size_t l = 0; l < model.layers; ++l) {
            for (std::size_t h = 0; h < model.kv_heads; ++h) {
                const auto& store = st.cache.head(l, h);
                const auto& want = sums.at({l, h});
                for (std::size_t i = 0; i < store.size(); ++i) {
                    r.max_error = std::max(r.max_error, std::abs(store.history[i] - want.at(store.positions[i])));
                }
            }
        }
        ++r.cases;
    }
    if (r.max_error > tol) {
        detail::fail(r, "history differs from stored rows");
    }
    return r;
}

inline std::string describe(const SuiteResult& r) {
    std::ostringstream os;
    os << (r.passed ? "PASS " : "FAIL ") << r.name << " cases=" << r.cases;
    if (r.max_error > 0) {
        os << " max_err=" << r.max_error;
    }
    if (!r.detail.empty()) {
        os << " (" << r.detail << ")";
    }
    return os.str();
}

}  // namespace linear_kv::verify
