// Copyright (C) 2026 The linear-kv Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sstream>

#include "linear_kv/config.hpp"

using namespace linear_kv;

TEST(ConfigTest, EmptyFileKeepsDefaults) {
    std::istringstream in("");
    EXPECT_EQ(parse_config(in), RunConfig{});
    std::istringstream comments("# nothing here\n\n   # indented comment\n");
    EXPECT_EQ(parse_config(comments), RunConfig{});
}

TEST(ConfigTest, ParsesEveryKey) {
    std::istringstream in(
        "grid = 8x8\nrho = 1/4, 3/8\npolicy = h2o\npolicies = full,h2o\narms = attacc\nn_init = 4\n"
        "recent_lines = auto\nlayers = 2\nheads = 4\nkv_heads = 2\ndim = 16\nvocab = 64\ncond_len = 5\n"
        "seed = 9  # trailing comment\nseeds = 3\ntrace_attention = true\nout = /tmp/x\n");
    const auto c = parse_config(in);
    EXPECT_EQ(c.grid, "8x8");
    EXPECT_EQ(c.rho, std::vector<std::string>({"1/4", "3/8"}));
    EXPECT_EQ(c.policy, "h2o");
    EXPECT_EQ(c.policies, std::vector<std::string>({"full", "h2o"}));
    EXPECT_EQ(c.arms, std::vector<std::string>({"attacc"}));
    EXPECT_EQ(c.n_init, 4u);
    EXPECT_FALSE(c.recent_lines);
    EXPECT_EQ(c.model.kv_heads, 2u);
    EXPECT_EQ(c.seed, 9u);
    EXPECT_EQ(c.model.seed, 9u);
    EXPECT_EQ(c.seeds, 3u);
    EXPECT_TRUE(c.trace_attention);
    EXPECT_EQ(c.out, "/tmp/x");
}

TEST(ConfigTest, UnknownKeysAreListed) {
    std::istringstream in("grid = 8x8\nbudget = 24\ncolour = red\n");
    try {
        parse_config(in);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "unknown-config-keys");
        EXPECT_NE(std::string(e.what()).find("budget"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("colour"), std::string::npos);
    }
}

TEST(ConfigTest, MalformedValues) {
    std::istringstream no_eq("grid 8x8\n");
    EXPECT_THROW(parse_config(no_eq), Error);
    std::istringstream bad_num("layers = two\n");
    EXPECT_THROW(parse_config(bad_num), Error);
    std::istringstream bad_grid("grid = 8*8\n");
    EXPECT_THROW(parse_config(bad_grid), Error);
    std::istringstream bad_rho("rho = 1/0\n");
    EXPECT_THROW(parse_config(bad_rho), Error);
}

TEST(ConfigTest, LaterSourcesOverrideEarlier) {
    std::istringstream in("rho = 1/6\n");
    auto c = parse_config(in);
    EXPECT_EQ(c.rho, std::vector<std::string>({"1/6"}));
    set_config_value(c, "rho", "1/4");
    EXPECT_EQ(c.rho, std::vector<std::string>({"1/4"}));
}

TEST(ConfigTest, EmitRoundTrips) {
    RunConfig c;
    c.grid = "12x10";
    c.rho = {"1/5", "1/2"};
    c.n_init = 3;
    c.model.layers = 6;
    c.seed = 17;
    c.model.seed = 17;
    c.trace_attention = true;
    std::istringstream in(emit_config(c));
    EXPECT_EQ(parse_config(in), c);
    std::istringstream defaults(emit_config(RunConfig{}));
    EXPECT_EQ(parse_config(defaults), RunConfig{});
}

TEST(ConfigTest, MissingFile) {
    try {
        load_config("/nonexistent/linear_kv.cfg");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "config-unreadable");
    }
}

TEST(ConfigTest, JsonOmitsOutputDirectory) {
    RunConfig c;
    c.out = "/somewhere";
    const auto j = config_json(c);
    EXPECT_FALSE(j.contains("out"));
    EXPECT_EQ(j.at("n_init"), "auto");
}
