// Copyright (C) 2026 The linear-kv Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <numeric>

#include "linear_kv/baselines.hpp"
#include "linear_kv/policy.hpp"
#include "linear_kv/verify.hpp"

using namespace linear_kv;

namespace {

const GridSpec fig_grid = make_grid(8, 8);
const BudgetConfig fig_cfg{Rational(3, 8), 24, 8, 1};

std::vector<std::size_t> range(std::size_t from, std::size_t to) {
    std::vector<std::size_t> v(to - from);
    std::iota(v.begin(), v.end(), from);
    return v;
}

std::vector<std::size_t> concat(std::vector<std::size_t> a, const std::vector<std::size_t>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

}  // namespace

TEST(RandomEvictTest, EdgeSizes) {
    const auto mid = range(3, 23);
    EXPECT_EQ(random_evict(mid, mid.size(), 1), mid);
    EXPECT_TRUE(random_evict(mid, 0, 1).empty());
    try {
        random_evict(mid, 21, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "insufficient-mid-tokens");
    }
}

TEST(RandomEvictTest, DeterministicPerSeed) {
    const auto mid = range(100, 120);
    const auto a = random_evict(mid, 8, 77);
    EXPECT_EQ(a, random_evict(mid, 8, 77));
    EXPECT_EQ(a.size(), 8u);
    EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
    for (const auto i : a) {
        EXPECT_GE(i, 100u);
        EXPECT_LT(i, 120u);
    }
    bool differs = false;
    for (std::uint64_t s = 0; s < 8 && !differs; ++s) {
        differs = random_evict(mid, 8, s) != a;
    }
    EXPECT_TRUE(differs);
}

TEST(StreamingRetainTest, FigureWindow) {
    // after line 3: sink 0..7 plus the 8 most recent positions, leaving room for line 4
    EXPECT_EQ(streaming_retain(fig_cfg, fig_grid, 3), concat(range(0, 8), range(16, 24)));
    EXPECT_EQ(streaming_retain(fig_cfg, fig_grid, 4), concat(range(0, 8), range(24, 32)));
    EXPECT_EQ(streaming_retain(fig_cfg, fig_grid, 7), concat(range(0, 8), range(48, 56)));
    // nothing is compressed after the last line
    EXPECT_EQ(streaming_retain(fig_cfg, fig_grid, 8), concat(range(0, 8), range(48, 64)));
    // before activation everything stays
    EXPECT_EQ(streaming_retain(fig_cfg, fig_grid, 2), range(0, 16));
}

TEST(StreamingRetainTest, PureSinkAndFullCache) {
    const BudgetConfig sink{Rational(3, 8), 24, 16, 0};
    EXPECT_EQ(streaming_retain(sink, fig_grid, 5), range(0, 16));
    const BudgetConfig full{Rational(1, 1), 64, 8, 2};
    EXPECT_EQ(streaming_retain(full, fig_grid, 5), range(0, 40));
}

TEST(H2OTest, TiesEvictOldestAndZeroHistoryGoesFirst) {
    VisualKVCache c(1, 1, 2, true);
    const std::vector<Real> k = {0, 0};
    for (std::size_t p = 0; p < 10; ++p) {
        c.append_token(0, 0, k, k, p);
    }
    std::vector<Real> row(10, 0.1);
    c.accumulate_history(0, 0, row);
    const auto mid = range(2, 8);
    EXPECT_EQ(h2o_evict(c.head(0, 0), mid, 3), std::vector<std::size_t>({2, 3, 4}));

    row.assign(10, 0.1);
    row[6] = -0.1;  // cancel position 6's mass entirely
    c.accumulate_history(0, 0, row);
    const auto pick = h2o_evict(c.head(0, 0), mid, 1);
    EXPECT_EQ(pick, std::vector<std::size_t>({6}));
}

TEST(PolicyTest, NamesRoundTrip) {
    for (const auto name : policy_names) {
        EXPECT_EQ(policy_name(parse_policy(name)), name);
    }
    EXPECT_THROW(parse_policy("lru"), Error);
    for (const auto name : ablation_names) {
        EXPECT_EQ(ablation_name(parse_ablation(name)), name);
    }
    EXPECT_THROW(parse_ablation("disable-all"), Error);
}

TEST(PolicyTest, AblationSetups) {
    const auto grid = make_grid(16, 16);
    const Rational rho(1, 4);
    const auto none = apply_ablation(AblationArm::none, grid, rho, {}, 0);
    EXPECT_EQ(none.policy.kind, PolicyKind::lineattn);
    EXPECT_EQ(none.budget.n_init, 16u);
    EXPECT_EQ(apply_ablation(AblationArm::disable_init, grid, rho, {}, 0).budget.n_init, 0u);
    EXPECT_EQ(apply_ablation(AblationArm::disable_rec, grid, rho, {}, 0).budget.recent_lines, 0u);
    EXPECT_EQ(apply_ablation(AblationArm::disable_mid, grid, rho, {}, 0).policy.scoring, Scoring::oldest_first);
    EXPECT_EQ(apply_ablation(AblationArm::attacc, grid, rho, {}, 0).policy.kind, PolicyKind::attacc);
}

TEST(BaselineSuites, StreamingAndAccumulated) {
    const auto s = verify::streaming_suite(6, 21);
    EXPECT_TRUE(s.passed) << verify::describe(s);
    const auto a = verify::accumulated_attention_suite(3);
    EXPECT_TRUE(a.passed) << verify::describe(a);
}
