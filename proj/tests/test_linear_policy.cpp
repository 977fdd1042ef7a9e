// Copyright (C) 2026 The linear-kv Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <functional>

#include "linear_kv/linear_policy.hpp"
#include "linear_kv/oracles.hpp"
#include "linear_kv/verify.hpp"

using namespace linear_kv;

namespace {

const GridSpec fig_grid = make_grid(8, 8);
const BudgetConfig fig_cfg{Rational(3, 8), 24, 8, 1};

std::string code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return {};
}

/// One-hot basis vector e_i of width d.
std::vector<Real> basis(std::size_t d, std::size_t i, Real scale = 1.0) {
    std::vector<Real> v(d, 0.0);
    v[i] = scale;
    return v;
}

}  // namespace

TEST(SaliencyTest, SingleKeyGetsAllMass) {
    Rng rng(1);
    const auto q = verify::detail::random_matrix(rng, 5, 4);
    const auto k = verify::detail::random_matrix(rng, 1, 4);
    const auto s = saliency(q, k);
    ASSERT_EQ(s.size(), 1u);
    EXPECT_DOUBLE_EQ(s[0], 1.0);
}

TEST(SaliencyTest, OrthogonalQueriesGiveUniformScores) {
    RowMatrix<Real> q(3, 8);
    RowMatrix<Real> k(4, 8);
    for (std::size_t r = 0; r < 3; ++r) {
        q(r, r) = 2.0;
    }
    for (std::size_t r = 0; r < 4; ++r) {
        k(r, 4 + r) = 1.0;
    }
    for (const auto v : saliency(q, k)) {
        EXPECT_DOUBLE_EQ(v, 0.25);
    }
}

TEST(SaliencyTest, MatchesDoubleLoopOracle) {
    Rng rng(99);
    const auto q = verify::detail::random_matrix(rng, 8, 16);
    const auto k = verify::detail::random_matrix(rng, 12, 16);
    const auto s = saliency(q, k);
    const auto ref = oracle::saliency(verify::detail::to_rows(q), verify::detail::to_rows(k));
    ASSERT_EQ(s.size(), ref.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        EXPECT_NEAR(s[i], ref[i], 1e-6);
    }
    EXPECT_NEAR(std::accumulate(s.begin(), s.end(), 0.0), 1.0, 1e-12);
}

TEST(SaliencyTest, Errors) {
    EXPECT_EQ(code_of([] { saliency(RowMatrix<Real>(0, 4), RowMatrix<Real>(2, 4)); }), "guide-queue-empty");
    EXPECT_EQ(code_of([] { saliency(RowMatrix<Real>(2, 4), RowMatrix<Real>(0, 4)); }), "empty-mid-region");
    EXPECT_EQ(code_of([] { saliency(RowMatrix<Real>(2, 4), RowMatrix<Real>(2, 3)); }), "shape-mismatch");
}

TEST(BottomKTest, PicksSmallest) {
    const std::vector<Real> s = {0.4, 0.1, 0.3, 0.2};
    EXPECT_EQ(bottom_k(s, 2), std::vector<std::size_t>({1, 3}));
    EXPECT_TRUE(bottom_k(s, 0).empty());
    EXPECT_EQ(bottom_k(s, 4), std::vector<std::size_t>({0, 1, 2, 3}));
}

TEST(BottomKTest, TiesEvictTheOlderPosition) {
    const std::vector<Real> s(6, 0.5);
    EXPECT_EQ(bottom_k(s, 3), std::vector<std::size_t>({0, 1, 2}));
    // raster positions out of index order: smallest positions are at indices 5, 3, 1
    const std::vector<std::size_t> pos = {40, 12, 33, 11, 50, 10};
    EXPECT_EQ(bottom_k(s, 3, pos), std::vector<std::size_t>({1, 3, 5}));
}

TEST(BottomKTest, MatchesSortOracle) {
    Rng rng(5);
    std::vector<Real> s(40);
    for (auto& v : s) {
        v = rng.uniform();
    }
    std::vector<std::size_t> pos(40);
    std::iota(pos.begin(), pos.end(), std::size_t{0});
    EXPECT_EQ(bottom_k(s, 8), oracle::bottom_k(s, pos, 8));
}

TEST(BottomKTest, Errors) {
    const std::vector<Real> s = {0.1, 0.2};
    EXPECT_EQ(code_of([&] { bottom_k(s, 3); }), "insufficient-mid-tokens");
    const std::vector<Real> bad = {0.1, std::nan("")};
    EXPECT_EQ(code_of([&] { bottom_k(bad, 1); }), "non-finite-value");
}

TEST(ShouldCompressTest, Cadence) {
    const BudgetConfig full{Rational(1, 1), 64, 8, 2};
    for (std::size_t line = 1; line <= 8; ++line) {
        EXPECT_FALSE(should_compress(full, fig_grid, line, line * 8));
    }
    EXPECT_FALSE(should_compress(fig_cfg, fig_grid, 1, 8));
    EXPECT_FALSE(should_compress(fig_cfg, fig_grid, 2, 16));
    EXPECT_TRUE(should_compress(fig_cfg, fig_grid, 3, 24));
    EXPECT_TRUE(should_compress(fig_cfg, fig_grid, 7, 24));
    EXPECT_FALSE(should_compress(fig_cfg, fig_grid, 8, 24));
}

TEST(GuideQueueTest, HoldsOneLinePerGroup) {
    GuideQueue g(1, 2, 3, 4, 2);
    EXPECT_EQ(g.capacity(), 8u);
    const std::vector<Real> q = {1, 2, 3};
    for (std::size_t i = 0; i < 8; ++i) {
        g.push(0, 1, q);
    }
    EXPECT_EQ(g.size(0, 1), 8u);
    EXPECT_EQ(g.size(0, 0), 0u);
    EXPECT_EQ(code_of([&] { g.push(0, 1, q); }), "guide-queue-overflow");
    EXPECT_EQ(g.rows(0, 1).rows(), 8u);
    g.clear();
    EXPECT_EQ(g.size(0, 1), 0u);
}

namespace {

/// Fig. 5 store for `heads` kv-heads holding positions 0..23 with one-hot keys, plus a full guide.
struct FigureFixture {
    std::size_t d = 32;
    VisualKVCache cache{1, 2, 32};
    GuideQueue guide{1, 2, 32, 8};

    void fill(std::size_t head, const std::function<std::vector<Real>(std::size_t)>& key_of,
              const std::vector<Real>& query) {
        for (std::size_t p = 0; p < 24; ++p) {
            const auto k = key_of(p);
            cache.append_token(0, head, k, k, p);
        }
        for (std::size_t i = 0; i < 8; ++i) {
            guide.push(0, head, query);
        }
    }
};

}  // namespace

TEST(CompressTest, UniformAttentionLeavesBudgetMinusLine) {
    FigureFixture f;
    const std::vector<Real> zero(f.d, 0.0);
    for (std::size_t h = 0; h < 2; ++h) {
        f.fill(h, [&](std::size_t) { return zero; }, zero);
    }
    const auto report = compress_end_of_line(f.cache, f.guide, fig_grid, fig_cfg, 3);
    EXPECT_EQ(report.line, 3u);
    ASSERT_EQ(report.heads.size(), 2u);
    for (std::size_t h = 0; h < 2; ++h) {
        EXPECT_EQ(f.cache.head(0, h).size(), 16u);
        // all mid scores tie, so all of mid (8..15) goes
        std::vector<std::size_t> mid(8);
        std::iota(mid.begin(), mid.end(), std::size_t{8});
        EXPECT_EQ(report.heads[h].evicted_positions, mid);
    }
}

TEST(CompressTest, ConstructedLogitsSelectTheLowestScorers) {
    // after one prior eviction the store is {0..7, 9, 12, 16..31}; at the end of line 4 the
    // mid region is {9, 12, 16..23} and the query favours 9 and 12
    const BudgetConfig cfg = fig_cfg;
    VisualKVCache cache(1, 1, 32);
    GuideQueue guide(1, 1, 32, 8);
    std::vector<std::size_t> pos;
    for (std::size_t p = 0; p < 32; ++p) {
        if ((p >= 8 && p < 16) && p != 9 && p != 12) {
            continue;
        }
        pos.push_back(p);
    }
    for (const auto p : pos) {
        const auto k = (p == 9 || p == 12) ? basis(32, 0, 4.0) : basis(32, 1 + p % 31);
        cache.append_token(0, 0, k, k, p);
    }
    for (std::size_t i = 0; i < 8; ++i) {
        guide.push(0, 0, basis(32, 0, 4.0));
    }
    const auto report = compress_end_of_line(cache, guide, fig_grid, cfg, 4);
    std::vector<std::size_t> want(8);
    std::iota(want.begin(), want.end(), std::size_t{16});
    EXPECT_EQ(report.heads[0].evicted_positions, want);
    EXPECT_EQ(cache.head(0, 0).size(), pos.size() - 8);
}

TEST(CompressTest, HeadsChooseIndependently) {
    FigureFixture f;
    // head 0 keeps even mid positions, head 1 keeps odd ones
    const auto q = basis(f.d, 0, 6.0);
    for (std::size_t h = 0; h < 2; ++h) {
        f.fill(h, [&](std::size_t p) { return p % 2 == h ? basis(f.d, 0) : basis(f.d, 1); }, q);
    }
    // mid is 8..15 and w = 8 so everything in mid goes; widen mid with r = 0
    BudgetConfig cfg = fig_cfg;
    cfg.recent_lines = 0;
    const auto report = compress_end_of_line(f.cache, f.guide, fig_grid, cfg, 3);
    ASSERT_EQ(report.heads.size(), 2u);
    EXPECT_NE(report.heads[0].evicted_positions, report.heads[1].evicted_positions);
    for (const auto& h : report.heads) {
        EXPECT_EQ(h.evicted_positions.size(), 8u);
        for (const auto p : h.evicted_positions) {
            EXPECT_NE(p % 2, h.head);
            EXPECT_GE(p, 8u);
        }
        EXPECT_EQ(f.cache.head(0, h.head).size(), 16u);
    }
}

TEST(CompressTest, Guards) {
    FigureFixture f;
    const std::vector<Real> zero(f.d, 0.0);
    for (std::size_t h = 0; h < 2; ++h) {
        f.fill(h, [&](std::size_t) { return zero; }, zero);
    }
    BudgetConfig tight = fig_cfg;
    tight.recent_lines = 2;
    EXPECT_EQ(code_of([&] { compress_end_of_line(f.cache, f.guide, fig_grid, tight, 3); }), "insufficient-mid-tokens");
    f.guide.clear();
    EXPECT_EQ(code_of([&] { compress_end_of_line(f.cache, f.guide, fig_grid, fig_cfg, 3); }), "guide-queue-empty");
}

TEST(AttAccTest, ScoresAreAccumulatedHistory) {
    VisualKVCache c(1, 1, 2, true);
    const std::vector<Real> k = {0, 0};
    for (std::size_t p = 0; p < 4; ++p) {
        c.append_token(0, 0, k, k, p);
    }
    const std::vector<Real> uniform(4, 0.25);
    c.accumulate_history(0, 0, uniform);
    const std::vector<std::size_t> all = {0, 1, 2, 3};
    for (const auto s : attacc_scores(c.head(0, 0), all)) {
        EXPECT_DOUBLE_EQ(s, 0.25);
    }
    const std::vector<Real> skew = {0.5, 0.0, 0.25, 0.25};
    c.accumulate_history(0, 0, skew);
    const auto s = attacc_scores(c.head(0, 0), all);
    EXPECT_DOUBLE_EQ(s[1], 0.25);
    EXPECT_EQ(bottom_k(s, 1), std::vector<std::size_t>({1}));

    VisualKVCache untracked(1, 1, 2);
    untracked.append_token(0, 0, k, k, 0);
    const std::vector<std::size_t> first = {0};
    EXPECT_EQ(code_of([&] { attacc_scores(untracked.head(0, 0), first); }), "history-not-tracked");
}

TEST(OracleSuites, SaliencyAndBottomK) {
    const auto s = verify::saliency_suite(200, 11);
    EXPECT_TRUE(s.passed) << verify::describe(s);
    const auto b = verify::bottom_k_suite(200, 12);
    EXPECT_TRUE(b.passed) << verify::describe(b);
}
