// Copyright (C) 2026 The linear-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "linear_kv/baselines.hpp"
#include "linear_kv/error.hpp"
#include "linear_kv/grid.hpp"
#include "linear_kv/kv_cache.hpp"
#include "linear_kv/linear_policy.hpp"
#include "linear_kv/rng.hpp"

namespace linear_kv {

enum class PolicyKind { full, lineattn, random, streaming, h2o, attacc };

inline constexpr std::array<std::string_view, 6> policy_names = {"full", "lineattn", "random", "streaming", "h2o", "attacc"};

inline std::string_view policy_name(PolicyKind k) { return policy_names[static_cast<std::size_t>(k)]; }

inline PolicyKind parse_policy(std::string_view name) {
    for (std::size_t i = 0; i < policy_names.size(); ++i) {
        if (policy_names[i] == name) {
            return static_cast<PolicyKind>(i);
        }
    }
    throw Error("unknown-policy", std::string(name));
}

/// Which eviction strategy runs at line ends, plus its knobs.
struct Policy {
    PolicyKind kind = PolicyKind::lineattn;
    /// LineAR scoring; the disable-mid ablation swaps in Scoring::oldest_first.
    Scoring scoring = Scoring::inter_line;
    std::uint64_t seed = 0;

    bool needs_history() const noexcept { return kind == PolicyKind::h2o || kind == PolicyKind::attacc; }
    bool compresses() const noexcept { return kind != PolicyKind::full; }
};

namespace detail {
inline EvictionReport evict_per_head(VisualKVCache& cache, const GridSpec& spec, const BudgetConfig& cfg,
                                     std::size_t line, auto&& choose) {
    EvictionReport report;
    report.line = line;
    for (std::size_t l = 0; l < cache.layers(); ++l) {
        for (std::size_t h = 0; h < cache.kv_heads(); ++h) {
            const auto part = partition(cache, l, h, spec, cfg, line);
            const std::vector<std::size_t> evict_idx = choose(part, l, h);
            report.heads.push_back({l, h, positions_of(cache.head(l, h), evict_idx)});
            cache.compact(l, h, part, evict_idx);
        }
    }
    return report;
}
}  // namespace detail

/**
 * @brief End-of-line hook: evicts one line's worth of mid entries per head under `policy`.
 *
 * The caller checks should_compress first.
 */
inline EvictionReport run_end_of_line(const Policy& policy, VisualKVCache& cache, const GuideQueue& guide,
                                      const GridSpec& spec, const BudgetConfig& cfg, std::size_t line) {
    switch (policy.kind) {
    case PolicyKind::full:
        return EvictionReport{line, {}};
    case PolicyKind::lineattn:
        return compress_end_of_line(cache, guide, spec, cfg, line, policy.scoring);
    case PolicyKind::attacc:
        return compress_end_of_line(cache, guide, spec, cfg, line, Scoring::accumulated);
    case PolicyKind::h2o:
        return detail::evict_per_head(cache, spec, cfg, line, [&](const RegionPartition& part, std::size_t l, std::size_t h) {
            return h2o_evict(cache.head(l, h), part.mid_idx, spec.w);
        });
    case PolicyKind::random:
        return detail::evict_per_head(cache, spec, cfg, line, [&](const RegionPartition& part, std::size_t l, std::size_t h) {
            const auto seed = mix_seed(mix_seed(policy.seed, line), l * 65536 + h);
            return random_evict(part.mid_idx, spec.w, seed);
        });
    case PolicyKind::streaming: {
        const auto keep = streaming_retain(cfg, spec, line);
        return detail::evict_per_head(cache, spec, cfg, line, [&](const RegionPartition&, std::size_t l, std::size_t h) {
            const auto& store = cache.head(l, h);
            std::vector<std::size_t> evict;
            for (std::size_t i = 0; i < store.size(); ++i) {
                if (!std::binary_search(keep.begin(), keep.end(), store.positions[i])) {
                    evict.push_back(i);
                }
            }
            return evict;
        });
    }
    }
    throw Error("unknown-policy");
}

/// Component-removal arms.
enum class AblationArm { none, disable_init, disable_rec, disable_mid, attacc };

inline constexpr std::array<std::string_view, 5> ablation_names = {"none", "disable-init", "disable-rec", "disable-mid",
                                                                   "attacc"};

inline std::string_view ablation_name(AblationArm a) { return ablation_names[static_cast<std::size_t>(a)]; }

inline AblationArm parse_ablation(std::string_view name) {
    for (std::size_t i = 0; i < ablation_names.size(); ++i) {
        if (ablation_names[i] == name) {
            return static_cast<AblationArm>(i);
        }
    }
    throw Error("unknown-ablation", std::string(name));
}

struct AblationSetup {
    Policy policy;
    BudgetConfig budget;
};

/**
 * disable-init: n_init = 0. disable-rec: r = 0 (the one-line buffer stays). disable-mid: mid
 * selection replaced by oldest-first, i.e. sink + window. attacc: accumulated-attention scoring.
 */
inline AblationSetup apply_ablation(AblationArm arm, const GridSpec& spec, const Rational& rho, BudgetOverrides ov,
                                    std::uint64_t seed) {
    AblationSetup out;
    out.policy.kind = PolicyKind::lineattn;
    out.policy.seed = seed;
    ov.allow_empty_regions = true;
    switch (arm) {
    case AblationArm::none:
        break;
    case AblationArm::disable_init:
        ov.n_init = 0;
        break;
    case AblationArm::disable_rec:
        ov.recent_lines = 0;
        break;
    case AblationArm::disable_mid:
        out.policy.scoring = Scoring::oldest_first;
        break;
    case AblationArm::attacc:
        out.policy.kind = PolicyKind::attacc;
        break;
    }
    out.budget = budget_from_ratio(spec, rho, ov);
    return out;
}

}  // namespace linear_kv
