// Copyright (C) 2026 The linear-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "linear_kv/analysis.hpp"
#include "linear_kv/bench.hpp"
#include "linear_kv/config.hpp"
#include "linear_kv/decoder.hpp"
#include "linear_kv/error.hpp"
#include "linear_kv/grid.hpp"
#include "linear_kv/policy.hpp"
#include "linear_kv/trace.hpp"
#include "linear_kv/verify.hpp"

namespace linear_kv::cli {

enum ExitCode : int { ok = 0, runtime_failure = 1, usage = 2, oracle_failure = 3 };

/// Thrown for invalid flag or config combinations; maps to exit code 2.
struct UsageError : Error {
    using Error::Error;
};

namespace detail {

/// Writes via a temporary sibling and rename, so readers never see a partial file.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error("io-error", "cannot write " + tmp.string());
        }
        out << content;
    }
    std::filesystem::rename(tmp, path);
}

inline std::string csv_preamble(const RunConfig& c, const std::string& subcommand) {
    auto j = config_json(c);
    j["subcommand"] = subcommand;
    return "# config: " + j.dump() + "\n";
}

inline Rational single_rho(const RunConfig& c) {
    if (c.rho.size() != 1) {
        throw UsageError("invalid-flags", "exactly one --rho value expected");
    }
    return parse_rational(c.rho.front());
}

inline BudgetOverrides overrides(const RunConfig& c) {
    BudgetOverrides ov;
    ov.n_init = c.n_init;
    ov.recent_lines = c.recent_lines;
    return ov;
}

/// Budget for a policy: "full" always runs at rho = 1.
inline BudgetConfig budget_for(PolicyKind kind, const GridSpec& grid, const Rational& rho, const RunConfig& c) {
    return budget_from_ratio(grid, kind == PolicyKind::full ? Rational(1, 1) : rho, overrides(c));
}

inline ModelConfig model_for(const RunConfig& c, std::uint64_t seed) {
    auto m = c.model;
    m.seed = seed;
    m.validate();
    return m;
}

struct Run {
    DecodeTrace trace;
    nlohmann::json final_cache;
};

inline Run run_once(const RunConfig& c, const ModelConfig& model, const GridSpec& grid, const BudgetConfig& budget,
                    const Policy& policy, const DecodeOptions& opts, const std::string& subcommand) {
    const ToyDecoder dec(model);
    const auto cond = ToyDecoder::make_condition(model, model.seed);
    auto state = dec.prefill(cond, grid, budget, policy, opts);
    state.trace.steps.reserve(grid.tokens());
    while (state.position < grid.tokens()) {
        dec.decode_step(state);
    }
    state.trace.final_hidden = state.hidden;
    auto cfg = config_json(c);
    cfg["subcommand"] = subcommand;
    cfg["resolved_seed"] = model.seed;
    state.trace.config = cfg;
    auto snap = state.cache.snapshot();
    snap["config"] = cfg;
    return {std::move(state.trace), std::move(snap)};
}

inline std::string trace_text(const DecodeTrace& t) {
    std::ostringstream os;
    write_trace(os, t, true);
    return os.str();
}

inline int cmd_generate(const RunConfig& c, std::ostream& out) {
    const auto grid = parse_grid(c.grid);
    Policy policy;
    policy.kind = parse_policy(c.policy);
    policy.seed = c.seed;
    const auto rho = single_rho(c);
    const auto budget = budget_for(policy.kind, grid, rho, c);
    const auto model = model_for(c, c.seed);

    const auto run = run_once(c, model, grid, budget, policy, {c.trace_attention, true}, "generate");
    const std::filesystem::path dir(c.out);
    write_atomic(dir / "trace.jsonl", trace_text(run.trace));
    write_atomic(dir / "final_cache.json", run.final_cache.dump(2) + "\n");

    const auto mem = memory_report(run.trace);
    out << "generate: grid=" << c.grid << " rho=" << budget.rho.str() << " B=" << budget.budget
        << " n_init=" << budget.n_init << " recent_lines=" << budget.recent_lines << " policy=" << c.policy << '\n'
        << "  eviction_events=" << run.trace.evictions.size() << " peak_head_visual=" << mem.peak_head_visual
        << " peak_entries=" << mem.peak_entries << '\n'
        << "  wrote " << (dir / "trace.jsonl").string() << '\n';
    return ok;
}

inline int cmd_bench(const RunConfig& c, std::ostream& out) {
    const auto grid = parse_grid(c.grid);
    std::vector<Rational> rhos;
    for (const auto& r : c.rho) {
        rhos.push_back(parse_rational(r));
    }
    std::vector<PolicyKind> kinds;
    for (const auto& p : c.policies) {
        kinds.push_back(parse_policy(p));
    }
    // validate every cell before spending time on any
    for (const auto k : kinds) {
        for (const auto& r : rhos) {
            budget_for(k, grid, r, c);
        }
    }

    std::ostringstream steps, summary;
    steps << csv_preamble(c, "bench") << bench_csv_header << ",seed\n";
    summary << csv_preamble(c, "bench")
            << "policy,rho,seed,peak_entries,peak_head_visual,peak_bytes_fp16,peak_bytes_fp32,saving_vs_full,"
               "mean_flops_last_half,first_half_tok_s,second_half_tok_s,ratio\n";
    std::size_t cells = 0;
    for (const auto k : kinds) {
        for (const auto& r : rhos) {
            if (k == PolicyKind::full && &r != &rhos.front()) {
                continue;  // rho does not apply
            }
            for (std::size_t i = 0; i < c.seeds; ++i) {
                const std::uint64_t seed = c.seed + i;
                const auto model = model_for(c, seed);
                Policy policy;
                policy.kind = k;
                policy.seed = seed;
                const auto budget = budget_for(k, grid, r, c);
                const auto run = run_once(c, model, grid, budget, policy, {false, true}, "bench");
                const auto& t = run.trace;

                std::ostringstream rows;
                write_bench_rows(rows, t, std::string(policy_name(k)));
                std::istringstream in(rows.str());
                for (std::string line; std::getline(in, line);) {
                    steps << line << ',' << seed << '\n';
                }

                const auto mem = memory_report(t);
                const std::size_t full_peak =
                    model.layers * model.kv_heads * (model.cond_len + grid.tokens());
                const auto flops = flops_proxy(t);
                const auto split = split_half_throughput(t);
                summary << policy_name(k) << ',' << budget.rho.str() << ',' << seed << ',' << mem.peak_entries << ','
                        << mem.peak_head_visual << ',' << mem.peak_bytes(model.dim, 2) << ',' << mem.peak_bytes(model.dim, 4) << ','
                        << 1.0 - static_cast<double>(mem.peak_entries) / static_cast<double>(full_peak) << ','
                        << mean_over(flops, flops.size() / 2, flops.size()) << ',' << split.first_half_rate << ','
                        << split.second_half_rate << ',' << split.ratio << '\n';
                ++cells;
            }
        }
    }
    const std::filesystem::path dir(c.out);
    write_atomic(dir / "bench_steps.csv", steps.str());
    write_atomic(dir / "bench_summary.csv", summary.str());
    out << "bench: " << cells << " runs on " << c.grid << "; wrote " << (dir / "bench_summary.csv").string() << '\n';
    return ok;
}

inline int cmd_analyze(const RunConfig& c, const std::string& trace_path, std::ostream& out) {
    std::ifstream in(trace_path);
    if (!in) {
        throw UsageError("trace-unreadable", trace_path);
    }
    const auto t = read_trace(in);
    std::ostringstream alloc, inter, local;
    const auto pre = csv_preamble(c, "analyze") + "# trace_config: " + t.config.dump() + "\n";
    alloc << pre;
    inter << pre << "# similarity: cosine\n";
    local << pre;
    write_allocation_csv(alloc, t);
    write_interline_csv(inter, t);
    write_locality_csv(local, t);
    auto summary = analysis_summary(t);
    summary["analyze_config"] = config_json(c);

    const std::filesystem::path dir(c.out);
    write_atomic(dir / "allocation.csv", alloc.str());
    write_atomic(dir / "interline.csv", inter.str());
    write_atomic(dir / "locality.csv", local.str());
    write_atomic(dir / "analysis_summary.json", summary.dump(2) + "\n");
    out << "analyze: " << t.attention.size() << " attention rows; wrote " << dir.string() << '\n';
    return ok;
}

inline int cmd_oracle(const RunConfig& c, std::ostream& out) {
    std::vector<verify::SuiteResult> results;
    results.push_back(verify::attention_suite(200, c.seed + 1));
    results.push_back(verify::saliency_suite(1000, c.seed + 2));
    results.push_back(verify::bottom_k_suite(1000, c.seed + 3));
    results.push_back(verify::full_cache_suite(3, make_grid(3, 3)));
    results.push_back(verify::randomized_runs_suite(20, c.seed + 4));
    results.push_back(verify::randomized_runs_suite(20, c.seed + 5, true));
    results.push_back(verify::streaming_suite(10, c.seed + 6));
    results.push_back(verify::accumulated_attention_suite(3));
    bool all = true;
    std::ostringstream report;
    report << csv_preamble(c, "oracle");
    for (const auto& r : results) {
        out << verify::describe(r) << '\n';
        report << verify::describe(r) << '\n';
        all = all && r.passed;
    }
    write_atomic(std::filesystem::path(c.out) / "oracle_report.txt", report.str());
    return all ? ok : oracle_failure;
}

inline int cmd_ablate(const RunConfig& c, std::ostream& out) {
    const auto grid = parse_grid(c.grid);
    const auto rho = single_rho(c);
    if (!(rho < Rational(1, 1))) {
        throw UsageError("invalid-flags", "ablate needs rho < 1");
    }
    const auto model = model_for(c, c.seed);
    const std::filesystem::path dir(c.out);

    Policy full;
    full.kind = PolicyKind::full;
    const auto reference = run_once(c, model, grid, budget_for(PolicyKind::full, grid, rho, c), full, {false, false}, "ablate");
    const auto ref_tokens = reference.trace.tokens();

    Policy streaming;
    streaming.kind = PolicyKind::streaming;
    const auto stream_budget = budget_from_ratio(grid, rho, overrides(c));
    const auto stream_run = run_once(c, model, grid, stream_budget, streaming, {false, false}, "ablate");

    std::ostringstream csv;
    csv << csv_preamble(c, "ablate")
        << "arm,policy,n_init,recent_lines,eviction_events,budget_ok,protected_ok,token_agreement_vs_full,"
           "evictions_match_streaming\n";
    bool all_ok = true;
    std::vector<std::string> arms = {"none"};
    arms.insert(arms.end(), c.arms.begin(), c.arms.end());
    for (const auto& name : arms) {
        const auto arm = parse_ablation(name);
        const auto setup = apply_ablation(arm, grid, rho, overrides(c), c.seed);
        const auto run = run_once(c, model, grid, setup.budget, setup.policy, {false, false}, "ablate");
        const auto& t = run.trace;
        const auto budget_violation = verify::check_budget(t);
        const auto protected_violation = verify::check_protected(t);
        const auto toks = t.tokens();
        std::size_t agree = 0;
        for (std::size_t i = 0; i < toks.size(); ++i) {
            agree += toks[i] == ref_tokens[i];
        }
        bool same_as_streaming = t.evictions.size() == stream_run.trace.evictions.size();
        for (std::size_t e = 0; same_as_streaming && e < t.evictions.size(); ++e) {
            const auto& a = t.evictions[e].heads;
            const auto& b = stream_run.trace.evictions[e].heads;
            same_as_streaming = a.size() == b.size();
            for (std::size_t h = 0; same_as_streaming && h < a.size(); ++h) {
                same_as_streaming = a[h].evicted_positions == b[h].evicted_positions;
            }
        }
        if (arm == AblationArm::disable_mid && !same_as_streaming) {
            all_ok = false;
            out << "ablate: disable-mid diverged from streaming\n";
        }
        if (budget_violation || protected_violation) {
            all_ok = false;
            out << "ablate: " << name << ": " << budget_violation.value_or(protected_violation.value_or("")) << '\n';
        }
        csv << name << ',' << t.policy << ',' << setup.budget.n_init << ',' << setup.budget.recent_lines << ','
            << t.evictions.size() << ',' << (budget_violation ? "false" : "true") << ','
            << (protected_violation ? "false" : "true") << ','
            << static_cast<double>(agree) / static_cast<double>(toks.size()) << ','
            << (same_as_streaming ? "true" : "false") << '\n';
        write_atomic(dir / ("ablate_" + name + ".jsonl"), trace_text(t));
    }
    write_atomic(dir / "ablation.csv", csv.str());
    out << "ablate: " << arms.size() << " arms; wrote " << (dir / "ablation.csv").string() << '\n';
    return all_ok ? ok : oracle_failure;
}

}  // namespace detail

/**
 * @brief Entry point shared by the linear-kv binary and the tests.
 *
 * Precedence: built-in defaults < $LINEAR_KV_OUT (output dir only) < --config file < flags.
 */
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"LineAR: line-granular KV-cache compression for raster-order generation"};
    app.require_subcommand(1);

    struct Flag {
        std::string key;
        std::string value;
        CLI::Option* opt = nullptr;
    };
    std::map<std::string, std::vector<Flag>> flags;
    std::map<std::string, std::string> config_path, trace_path;
    std::map<std::string, bool> trace_attention;

    auto add_common = [&](CLI::App* sub) {
        auto& fl = flags[sub->get_name()];
        fl.reserve(32);
        auto add = [&](const std::string& name, const std::string& key, const std::string& help) {
            fl.push_back({key, {}, nullptr});
            fl.back().opt = sub->add_option(name, fl.back().value, help);
        };
        sub->add_option("--config", config_path[sub->get_name()], "key = value config file");
        add("--grid", "grid", "grid as HxW");
        add("--rho", "rho", "budget ratio a/b (comma list for bench)");
        add("--policy", "policy", "full|lineattn|random|streaming|h2o|attacc");
        add("--policies", "policies", "comma list of policies (bench)");
        add("--arms", "arms", "comma list of ablation arms (ablate)");
        add("--n-init", "n_init", "anchor tokens (default: one line)");
        add("--recent-lines", "recent_lines", "recent window in lines (default: 2, clamped to the budget)");
        add("--layers", "layers", "decoder layers");
        add("--heads", "heads", "query heads");
        add("--kv-heads", "kv_heads", "kv heads");
        add("--dim", "dim", "head dimension");
        add("--vocab", "vocab", "vocabulary size");
        add("--cond-len", "cond_len", "conditional tokens");
        add("--seed", "seed", "base seed");
        add("--seeds", "seeds", "number of seeds (bench)");
        add("--out", "out", "output directory (default $LINEAR_KV_OUT or ./linear_kv_out)");
        sub->add_flag("--trace-attention", trace_attention[sub->get_name()], "record attention rows");
    };

    auto* gen = app.add_subcommand("generate", "one run -> trace");
    auto* bench = app.add_subcommand("bench", "policy x rho sweep -> CSV");
    auto* analyze = app.add_subcommand("analyze", "trace -> observation CSVs");
    auto* oracle = app.add_subcommand("oracle", "brute-force equivalence suites");
    auto* ablate = app.add_subcommand("ablate", "component ablation arms");
    for (auto* sub : {gen, bench, analyze, oracle, ablate}) {
        add_common(sub);
    }
    analyze->add_option("--trace", trace_path["analyze"], "trace.jsonl to analyze")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? ok : usage;
    }

    CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();

    RunConfig cfg;
    try {
        if (const char* env = std::getenv("LINEAR_KV_OUT"); env && *env) {
            cfg.out = env;
        }
        if (!config_path[name].empty()) {
            std::ifstream in(config_path[name]);
            if (!in) {
                throw Error("config-unreadable", config_path[name]);
            }
            cfg = parse_config(in, cfg);
        }
        for (const auto& f : flags[name]) {
            if (f.opt->count() > 0) {
                set_config_value(cfg, f.key, f.value);
            }
        }
        if (trace_attention[name]) {
            cfg.trace_attention = true;
        }
        cfg.model.seed = cfg.seed;
        cfg.model.validate();
        parse_policy(cfg.policy);
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return usage;
    }

    try {
        if (name == "generate") {
            return detail::cmd_generate(cfg, out);
        }
        if (name == "bench") {
            return detail::cmd_bench(cfg, out);
        }
        if (name == "analyze") {
            return detail::cmd_analyze(cfg, trace_path["analyze"], out);
        }
        if (name == "oracle") {
            return detail::cmd_oracle(cfg, out);
        }
        return detail::cmd_ablate(cfg, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return usage;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        static const char* usage_codes[] = {"budget-not-line-aligned", "budget-too-small", "invalid-ratio",
                                            "invalid-grid", "invalid-budget", "unknown-policy", "unknown-ablation",
                                            "invalid-model"};
        for (const char* code : usage_codes) {
            if (e.code() == code) {
                return usage;
            }
        }
        return runtime_failure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return runtime_failure;
    }
}

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    std::vector<const char*> argv;
    argv.push_back("linear-kv");
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace linear_kv::cli
