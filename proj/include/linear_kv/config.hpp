// Copyright (C) 2026 The linear-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "linear_kv/error.hpp"
#include "linear_kv/grid.hpp"
#include "linear_kv/model_config.hpp"
#include "linear_kv/rational.hpp"

namespace linear_kv {

/**
 * @brief Fully resolved run configuration.
 *
 * File format: one `key = value` per line, `#` starts a comment. Lists are comma separated.
 * `n_init` and `recent_lines` accept `auto` (budget-derived defaults).
 */
struct RunConfig {
    std::string grid = "16x16";
    std::vector<std::string> rho = {"1/4"};
    std::string policy = "lineattn";
    std::vector<std::string> policies = {"full", "lineattn", "streaming", "h2o", "random"};
    std::vector<std::string> arms = {"disable-init", "disable-rec", "disable-mid", "attacc"};
    std::optional<std::size_t> n_init;
    std::optional<std::size_t> recent_lines;
    ModelConfig model;
    std::uint64_t seed = 0;
    std::size_t seeds = 1;
    bool trace_attention = false;
    std::string out = "linear_kv_out";

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

namespace detail {
inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto comma = s.find(',', start);
        const auto item = trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (!item.empty()) {
            out.push_back(item);
        }
        if (comma == std::string_view::npos) {
            break;
        }
        start = comma + 1;
    }
    return out;
}

inline std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        out += (i ? "," : "") + items[i];
    }
    return out;
}

inline std::uint64_t to_u64(const std::string& key, const std::string& value) {
    try {
        return parse_u64(value, value);
    } catch (const Error&) {
        throw Error("invalid-config-value", key + " = " + value);
    }
}

inline bool to_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") {
        return true;
    }
    if (value == "false" || value == "0") {
        return false;
    }
    throw Error("invalid-config-value", key + " = " + value);
}

inline std::optional<std::size_t> to_opt(const std::string& key, const std::string& value) {
    if (value == "auto") {
        return std::nullopt;
    }
    return static_cast<std::size_t>(to_u64(key, value));
}
}  // namespace detail

/// Applies one key; returns false for an unknown key.
inline bool set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
    using namespace detail;
    if (key == "grid") {
        parse_grid(value);
        c.grid = value;
    } else if (key == "rho") {
        c.rho = split_list(value);
        for (const auto& r : c.rho) {
            parse_rational(r);
        }
    } else if (key == "policy") {
        c.policy = value;
    } else if (key == "policies") {
        c.policies = split_list(value);
    } else if (key == "arms") {
        c.arms = split_list(value);
    } else if (key == "n_init") {
        c.n_init = to_opt(key, value);
    } else if (key == "recent_lines") {
        c.recent_lines = to_opt(key, value);
    } else if (key == "layers") {
        c.model.layers = to_u64(key, value);
    } else if (key == "heads") {
        c.model.heads = to_u64(key, value);
    } else if (key == "kv_heads") {
        c.model.kv_heads = to_u64(key, value);
    } else if (key == "dim") {
        c.model.dim = to_u64(key, value);
    } else if (key == "vocab") {
        c.model.vocab = to_u64(key, value);
    } else if (key == "cond_len") {
        c.model.cond_len = to_u64(key, value);
    } else if (key == "seed") {
        c.seed = to_u64(key, value);
        c.model.seed = c.seed;
    } else if (key == "seeds") {
        c.seeds = to_u64(key, value);
    } else if (key == "trace_attention") {
        c.trace_attention = to_bool(key, value);
    } else if (key == "out") {
        c.out = value;
    } else {
        return false;
    }
    return true;
}

inline RunConfig parse_config(std::istream& in, RunConfig base = {}) {
    std::vector<std::string> unknown;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        const auto text = detail::trim(line);
        if (text.empty()) {
            continue;
        }
        const auto eq = text.find('=');
        if (eq == std::string::npos) {
            throw Error("invalid-config-line", "line " + std::to_string(lineno) + ": expected key = value");
        }
        const auto key = detail::trim(std::string_view(text).substr(0, eq));
        const auto value = detail::trim(std::string_view(text).substr(eq + 1));
        if (!set_config_value(base, key, value)) {
            unknown.push_back(key);
        }
    }
    if (!unknown.empty()) {
        throw Error("unknown-config-keys", detail::join(unknown));
    }
    return base;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("config-unreadable", path);
    }
    return parse_config(in);
}

/// Inverse of parse_config: re-loading the output yields an identical RunConfig.
inline std::string emit_config(const RunConfig& c) {
    std::ostringstream os;
    auto opt = [](const std::optional<std::size_t>& v) { return v ? std::to_string(*v) : std::string("auto"); };
    os << "grid = " << c.grid << '\n'
       << "rho = " << detail::join(c.rho) << '\n'
       << "policy = " << c.policy << '\n'
       << "policies = " << detail::join(c.policies) << '\n'
       << "arms = " << detail::join(c.arms) << '\n'
       << "n_init = " << opt(c.n_init) << '\n'
       << "recent_lines = " << opt(c.recent_lines) << '\n'
       << "layers = " << c.model.layers << '\n'
       << "heads = " << c.model.heads << '\n'
       << "kv_heads = " << c.model.kv_heads << '\n'
       << "dim = " << c.model.dim << '\n'
       << "vocab = " << c.model.vocab << '\n'
       << "cond_len = " << c.model.cond_len << '\n'
       << "seed = " << c.seed << '\n'
       << "seeds = " << c.seeds << '\n'
       << "trace_attention = " << (c.trace_attention ? "true" : "false") << '\n'
       << "out = " << c.out << '\n';
    return os.str();
}

inline nlohmann::json config_json(const RunConfig& c) {
    nlohmann::json j = {{"grid", c.grid},         {"rho", c.rho},       {"policy", c.policy},
                        {"policies", c.policies}, {"arms", c.arms},     {"model", c.model},
                        {"seed", c.seed},         {"seeds", c.seeds},   {"trace_attention", c.trace_attention}};
    j["n_init"] = c.n_init ? nlohmann::json(*c.n_init) : nlohmann::json("auto");
    j["recent_lines"] = c.recent_lines ? nlohmann::json(*c.recent_lines) : nlohmann::json("auto");
    return j;
}

}  // namespace linear_kv
