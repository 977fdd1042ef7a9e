// Copyright (C) 2026 The linear-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "linear_kv/error.hpp"
#include "linear_kv/grid.hpp"
#include "linear_kv/linear_policy.hpp"
#include "linear_kv/matrix.hpp"
#include "linear_kv/model_config.hpp"
#include "linear_kv/rng.hpp"

namespace linear_kv {

inline constexpr const char* trace_schema = "linear-kv-trace";
inline constexpr int trace_schema_version = 1;

struct StepRecord {
    std::size_t step = 0;
    std::size_t token = 0;
    /// Visual entries attended per (layer, kv-head), row-major by layer, at attention time.
    std::vector<std::size_t> visual_len;
    std::optional<std::uint64_t> step_ns;
};

/// One query head's attention row at one step: conditional weights, then visual weights by position.
struct AttentionRecord {
    std::size_t step = 0;
    std::size_t layer = 0;
    std::size_t head = 0;
    std::vector<Real> cond_weights;
    std::vector<std::size_t> positions;
    std::vector<Real> weights;
};

/**
 * @brief Everything one generation run produced.
 *
 * Attention rows are present only when recording was enabled; step_ns only when timing was on.
 */
struct DecodeTrace {
    GridSpec grid;
    BudgetConfig budget;
    ModelConfig model;
    std::string policy;
    std::vector<std::size_t> cond_tokens;
    nlohmann::json config = nlohmann::json::object();
    bool attention_recorded = false;

    std::vector<StepRecord> steps;
    std::vector<EvictionReport> evictions;
    std::vector<AttentionRecord> attention;
    std::vector<Real> final_hidden;

    std::vector<std::size_t> tokens() const {
        std::vector<std::size_t> out;
        out.reserve(steps.size());
        for (const auto& s : steps) {
            out.push_back(s.token);
        }
        return out;
    }

    std::vector<std::size_t> eviction_lines() const {
        std::vector<std::size_t> out;
        for (const auto& e : evictions) {
            out.push_back(e.line);
        }
        return out;
    }
};

inline nlohmann::json budget_json(const BudgetConfig& b) {
    return {{"rho", b.rho.str()}, {"budget", b.budget}, {"n_init", b.n_init}, {"recent_lines", b.recent_lines}};
}

inline nlohmann::json trace_header(const DecodeTrace& t) {
    return {{"kind", "header"},
            {"schema", trace_schema},
            {"version", trace_schema_version},
            {"rng", Rng::algorithm},
            {"grid", to_string(t.grid)},
            {"budget", budget_json(t.budget)},
            {"model", t.model},
            {"policy", t.policy},
            {"cond_tokens", t.cond_tokens},
            {"attention_recorded", t.attention_recorded},
            {"config", t.config}};
}

/**
 * @brief Writes the trace as JSON lines: header, then per step its step record, attention
 * records and any eviction records, then a summary line.
 *
 * With include_timings = false the output is a pure function of config and seed.
 */
inline void write_trace(std::ostream& os, const DecodeTrace& t, bool include_timings = true) {
    os << trace_header(t).dump() << '\n';

    std::map<std::size_t, const EvictionReport*> eviction_at_step;
    for (const auto& e : t.evictions) {
        eviction_at_step[e.line * t.grid.w - 1] = &e;
    }
    std::size_t att = 0;
    for (const auto& s : t.steps) {
        nlohmann::json rec = {{"kind", "step"}, {"step", s.step}, {"token", s.token}, {"visual_len", s.visual_len}};
        if (include_timings && s.step_ns) {
            rec["step_ns"] = *s.step_ns;
        }
        os << rec.dump() << '\n';
        for (; att < t.attention.size() && t.attention[att].step == s.step; ++att) {
            const auto& a = t.attention[att];
            os << nlohmann::json{{"kind", "attention"}, {"step", a.step},  {"layer", a.layer},    {"head", a.head},
                                 {"cond", a.cond_weights}, {"positions", a.positions}, {"weights", a.weights}}
                      .dump()
               << '\n';
        }
        if (auto it = eviction_at_step.find(s.step); it != eviction_at_step.end()) {
            for (const auto& h : it->second->heads) {
                os << nlohmann::json{{"kind", "eviction"}, {"line", it->second->line}, {"layer", h.layer},
                                     {"head", h.head}, {"evicted_positions", h.evicted_positions}}
                          .dump()
                   << '\n';
            }
        }
    }
    os << nlohmann::json{{"kind", "summary"},
                         {"tokens", t.tokens()},
                         {"eviction_events", t.evictions.size()},
                         {"final_hidden", t.final_hidden}}
              .dump()
       << '\n';
}

namespace detail {
inline void read_record(DecodeTrace& t, const nlohmann::json& j, bool& have_header) {
    const auto kind = j.value("kind", std::string{});
    if (kind != "header" && !have_header) {
        throw Error("invalid-trace", "record before header");
    }
    if (kind == "header") {
        if (j.value("schema", std::string{}) != trace_schema || j.value("version", 0) != trace_schema_version) {
            throw Error("invalid-trace", "unsupported schema");
        }
        t.grid = parse_grid(j.at("grid").get<std::string>());
        const auto& b = j.at("budget");
        t.budget.rho = parse_rational(b.at("rho").get<std::string>());
        b.at("budget").get_to(t.budget.budget);
        b.at("n_init").get_to(t.budget.n_init);
        b.at("recent_lines").get_to(t.budget.recent_lines);
        t.model = j.at("model").get<ModelConfig>();
        j.at("policy").get_to(t.policy);
        j.at("cond_tokens").get_to(t.cond_tokens);
        j.at("attention_recorded").get_to(t.attention_recorded);
        t.config = j.at("config");
        have_header = true;
    } else if (kind == "step") {
        StepRecord s;
        j.at("step").get_to(s.step);
        j.at("token").get_to(s.token);
        j.at("visual_len").get_to(s.visual_len);
        if (j.contains("step_ns")) {
            s.step_ns = j.at("step_ns").get<std::uint64_t>();
        }
        t.steps.push_back(std::move(s));
    } else if (kind == "attention") {
        AttentionRecord a;
        j.at("step").get_to(a.step);
        j.at("layer").get_to(a.layer);
        j.at("head").get_to(a.head);
        j.at("cond").get_to(a.cond_weights);
        j.at("positions").get_to(a.positions);
        j.at("weights").get_to(a.weights);
        t.attention.push_back(std::move(a));
    } else if (kind == "eviction") {
        const auto ln = j.at("line").get<std::size_t>();
        if (t.evictions.empty() || t.evictions.back().line != ln) {
            t.evictions.push_back(EvictionReport{ln, {}});
        }
        t.evictions.back().heads.push_back(
            {j.at("layer").get<std::size_t>(), j.at("head").get<std::size_t>(),
             j.at("evicted_positions").get<std::vector<std::size_t>>()});
    } else if (kind == "summary") {
        j.at("final_hidden").get_to(t.final_hidden);
    } else {
        throw Error("invalid-trace", "unknown record kind '" + kind + "'");
    }
}
}  // namespace detail

inline DecodeTrace read_trace(std::istream& is) {
    DecodeTrace t;
    std::string line;
    bool have_header = false;
    while (std::getline(is, line)) {
        if (line.empty()) {
            continue;
        }
        try {
            detail::read_record(t, nlohmann::json::parse(line), have_header);
        } catch (const nlohmann::json::exception& e) {
            throw Error("invalid-trace", e.what());
        }
    }
    if (!have_header) {
        throw Error("invalid-trace", "missing header");
    }
    return t;
}

}  // namespace linear_kv
