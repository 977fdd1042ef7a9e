// Copyright (C) 2026 The linear-kv Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sstream>

#include "linear_kv/decoder.hpp"
#include "linear_kv/oracles.hpp"
#include "linear_kv/verify.hpp"

using namespace linear_kv;

namespace {

ModelConfig small_model(std::uint64_t seed = 3) {
    ModelConfig m;
    m.layers = 2;
    m.heads = 2;
    m.kv_heads = 2;
    m.dim = 8;
    m.vocab = 32;
    m.cond_len = 4;
    m.seed = seed;
    return m;
}

Policy lineattn() {
    Policy p;
    p.kind = PolicyKind::lineattn;
    return p;
}

std::string trace_body(const DecodeTrace& t) {
    std::ostringstream os;
    write_trace(os, t, false);
    return os.str();
}

}  // namespace

TEST(PrefillTest, ConditionalShapes) {
    auto m = small_model();
    const ToyDecoder dec(m);
    const auto grid = make_grid(2, 2);
    const auto full = budget_from_ratio(grid, Rational(1, 1));
    const std::vector<std::size_t> one = {5};
    const auto s1 = dec.prefill(one, grid, full, lineattn());
    EXPECT_EQ(s1.cache.cond_len(), 1u);
    EXPECT_EQ(s1.cache.blocks(1, 1)[0].count, 1u);

    const std::vector<std::size_t> seven = {1, 2, 3, 4, 5, 6, 7};
    const auto s7 = dec.prefill(seven, grid, full, lineattn());
    for (std::size_t l = 0; l < 2; ++l) {
        for (std::size_t h = 0; h < 2; ++h) {
            EXPECT_EQ(s7.cache.blocks(l, h)[0].count, 7u);
            EXPECT_EQ(s7.cache.head(l, h).size(), 0u);
        }
    }
}

TEST(PrefillTest, Errors) {
    const ToyDecoder dec(small_model());
    const auto grid = make_grid(2, 2);
    const auto full = budget_from_ratio(grid, Rational(1, 1));
    try {
        dec.prefill({}, grid, full, lineattn());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "empty-condition");
    }
    const std::vector<std::size_t> bad = {32};
    EXPECT_THROW(dec.prefill(bad, grid, full, lineattn()), Error);
}

TEST(PrefillTest, ConditionalKVIsDeterministic) {
    const auto m = small_model(11);
    const auto cond = ToyDecoder::make_condition(m, 11);
    EXPECT_EQ(cond, ToyDecoder::make_condition(m, 11));
    const auto grid = make_grid(2, 2);
    const auto full = budget_from_ratio(grid, Rational(1, 1));
    const auto a = ToyDecoder(m).prefill(cond, grid, full, lineattn());
    const auto b = ToyDecoder(m).prefill(cond, grid, full, lineattn());
    for (std::size_t l = 0; l < 2; ++l) {
        for (std::size_t h = 0; h < 2; ++h) {
            const auto ka = a.cache.cond_keys(l, h);
            const auto kb = b.cache.cond_keys(l, h);
            EXPECT_TRUE(std::equal(ka.begin(), ka.end(), kb.begin(), kb.end()));
        }
    }
}

TEST(DecodeTest, FullCacheMatchesReference) {
    for (const auto& base : verify::model_sizes()) {
        auto m = base;
        m.seed = 4;
        const ToyDecoder dec(m);
        const auto cond = ToyDecoder::make_condition(m, 4);
        const auto grid = make_grid(3, 4);
        const auto t = dec.generate(cond, grid, budget_from_ratio(grid, Rational(1, 1)), lineattn());
        const auto ref = oracle::reference_generate(m, dec.weights(), cond, grid.tokens());
        EXPECT_EQ(t.tokens(), ref.tokens);
        for (std::size_t i = 0; i < ref.final_hidden.size(); ++i) {
            EXPECT_NEAR(t.final_hidden[i], ref.final_hidden[i], 1e-9);
        }
    }
}

TEST(DecodeTest, AttentionSpanFollowsTheBudget) {
    const auto m = small_model();
    const ToyDecoder dec(m);
    const auto grid = make_grid(8, 8);
    const auto budget = budget_from_ratio(grid, Rational(3, 8));
    auto s = dec.prefill(ToyDecoder::make_condition(m, 1), grid, budget, lineattn(), {true, false});
    dec.decode_step(s);
    // the first step sees the conditionals plus its own entry
    ASSERT_EQ(s.trace.attention.front().cond_weights.size(), m.cond_len);
    EXPECT_EQ(s.trace.attention.front().positions, std::vector<std::size_t>({0}));
    while (s.position < grid.tokens()) {
        dec.decode_step(s);
    }
    for (const auto& a : s.trace.attention) {
        if (a.step < 32 || a.step >= 40) {
            continue;
        }
        // line 5 (0-based row 4): B - w retained, plus k + 1 entries of the current line
        const std::size_t k = a.step - 32;
        EXPECT_EQ(a.cond_weights.size() + a.positions.size(), m.cond_len + (24 - 8) + k + 1);
    }
}

TEST(DecodeTest, TinyGridHasNoEvictions) {
    const auto m = small_model();
    const ToyDecoder dec(m);
    const auto grid = make_grid(2, 2);
    const auto t = dec.generate(ToyDecoder::make_condition(m, 0), grid, budget_from_ratio(grid, Rational(1, 1)), lineattn());
    EXPECT_EQ(t.steps.size(), 4u);
    EXPECT_TRUE(t.evictions.empty());
}

TEST(DecodeTest, FigureCadence) {
    const auto m = small_model();
    const ToyDecoder dec(m);
    const auto grid = make_grid(8, 8);
    const auto t = dec.generate(ToyDecoder::make_condition(m, 0), grid, budget_from_ratio(grid, Rational(3, 8)), lineattn());
    EXPECT_EQ(t.eviction_lines(), std::vector<std::size_t>({3, 4, 5, 6, 7}));
    EXPECT_FALSE(verify::check_budget(t));
    EXPECT_FALSE(verify::check_protected(t));
}

TEST(DecodeTest, GenerationCompleteAfterLastToken) {
    const auto m = small_model();
    const ToyDecoder dec(m);
    const auto grid = make_grid(2, 2);
    auto s = dec.prefill(ToyDecoder::make_condition(m, 0), grid, budget_from_ratio(grid, Rational(1, 1)), lineattn());
    for (int i = 0; i < 4; ++i) {
        dec.decode_step(s);
    }
    try {
        dec.decode_step(s);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "generation-complete");
    }
}

TEST(DecodeTest, RunsAreByteIdentical) {
    const auto m = small_model(9);
    const auto grid = make_grid(8, 8);
    const auto budget = budget_from_ratio(grid, Rational(3, 8));
    const auto cond = ToyDecoder::make_condition(m, 9);
    const auto a = ToyDecoder(m).generate(cond, grid, budget, lineattn(), {true, true});
    const auto b = ToyDecoder(m).generate(cond, grid, budget, lineattn(), {true, true});
    EXPECT_EQ(trace_body(a), trace_body(b));
}

TEST(DecodeTest, GroupedQueryAttentionRuns) {
    auto m = small_model();
    m.heads = 4;
    m.kv_heads = 2;
    const ToyDecoder dec(m);
    const auto grid = make_grid(6, 4);
    for (const auto kind : {PolicyKind::lineattn, PolicyKind::h2o, PolicyKind::attacc, PolicyKind::random,
                            PolicyKind::streaming}) {
        Policy p;
        p.kind = kind;
        const auto t = dec.generate(ToyDecoder::make_condition(m, 0), grid, budget_from_ratio(grid, Rational(1, 2)), p);
        EXPECT_EQ(t.eviction_lines(), std::vector<std::size_t>({3, 4, 5})) << policy_name(kind);
        EXPECT_FALSE(verify::check_budget(t));
    }
}

TEST(TraceTest, RoundTripsThroughJsonLines) {
    const auto m = small_model(2);
    const auto grid = make_grid(8, 8);
    const auto t = ToyDecoder(m).generate(ToyDecoder::make_condition(m, 2), grid,
                                          budget_from_ratio(grid, Rational(3, 8)), lineattn(), {true, true});
    std::stringstream ss;
    write_trace(ss, t, true);
    const auto back = read_trace(ss);
    EXPECT_EQ(back.tokens(), t.tokens());
    EXPECT_EQ(back.eviction_lines(), t.eviction_lines());
    EXPECT_EQ(back.attention.size(), t.attention.size());
    EXPECT_EQ(back.budget, t.budget);
    EXPECT_EQ(back.model, t.model);
    EXPECT_EQ(back.steps.back().step_ns, t.steps.back().step_ns);
    EXPECT_EQ(trace_body(back), trace_body(t));

    std::istringstream garbage("{\"kind\":\"step\"}\n");
    EXPECT_THROW(read_trace(garbage), Error);
}
