// Copyright (C) 2026 The linear-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "linear_kv/error.hpp"
#include "linear_kv/rational.hpp"

namespace linear_kv {

/// 2D raster view of the visual token sequence: h lines of w tokens.
struct GridSpec {
    std::size_t h = 1;
    std::size_t w = 1;

    std::size_t tokens() const noexcept { return h * w; }
    friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

inline GridSpec make_grid(std::size_t h, std::size_t w) {
    if (h == 0 || w == 0) {
        throw Error("invalid-grid", "grid dimensions must be >= 1");
    }
    return GridSpec{h, w};
}

/// Parses "HxW".
inline GridSpec parse_grid(std::string_view text) {
    const auto x = text.find_first_of("xX");
    if (x == std::string_view::npos) {
        throw Error("invalid-grid", "expected HxW, got '" + std::string(text) + "'");
    }
    try {
        return make_grid(detail::parse_u64(text.substr(0, x), text), detail::parse_u64(text.substr(x + 1), text));
    } catch (const Error& e) {
        if (e.code() == "invalid-grid") {
            throw;
        }
        throw Error("invalid-grid", "expected HxW, got '" + std::string(text) + "'");
    }
}

inline std::string to_string(const GridSpec& g) { return std::to_string(g.h) + "x" + std::to_string(g.w); }

/// 0-based raster line of a 0-based position.
inline std::size_t line_of(const GridSpec& spec, std::size_t position) {
    if (position >= spec.tokens()) {
        throw Error("position-out-of-grid", std::to_string(position) + " >= " + std::to_string(spec.tokens()));
    }
    return position / spec.w;
}

/**
 * @brief Cache budget of the visual store, per (layer, kv-head).
 *
 * budget = rho * N visual entries, always a whole number of lines. The first n_init raster
 * positions are anchors and the last `recent_lines` generated lines are the recent window; both
 * are counted inside the budget.
 */
struct BudgetConfig {
    Rational rho{1, 1};
    std::size_t budget = 0;
    std::size_t n_init = 0;
    std::size_t recent_lines = 0;

    bool compresses() const noexcept { return rho < Rational(1, 1); }
    std::size_t budget_lines(const GridSpec& spec) const noexcept { return budget / spec.w; }
    friend bool operator==(const BudgetConfig&, const BudgetConfig&) = default;
};

struct BudgetOverrides {
    std::optional<std::size_t> n_init;
    std::optional<std::size_t> recent_lines;
    /// Ablation arms may zero the anchor or recent region.
    bool allow_empty_regions = false;
};

inline constexpr std::size_t default_recent_lines = 2;

namespace detail {
inline std::string nearest_valid_ratios(const GridSpec& spec, const Rational& rho) {
    // valid budgets are k*w for k = 1..h, i.e. rho = k/h
    const double target = rho.to_double() * static_cast<double>(spec.h);
    const auto lo = static_cast<std::size_t>(std::max(1.0, std::min(static_cast<double>(spec.h), std::floor(target))));
    const auto hi = std::min(spec.h, lo + 1);
    std::string out = Rational(lo, spec.h).str();
    if (hi != lo) {
        out += ", " + Rational(hi, spec.h).str();
    }
    return out;
}
}  // namespace detail

/// Throws if cfg cannot run the end-of-line pipeline on spec.
inline void validate_budget(const GridSpec& spec, const BudgetConfig& cfg, bool allow_empty_regions = false) {
    if (!allow_empty_regions && (cfg.n_init < 1 || cfg.recent_lines < 1)) {
        throw Error("invalid-budget", "n_init and recent_lines must be >= 1");
    }
    if (cfg.budget == 0 || cfg.budget % spec.w != 0 || cfg.budget > spec.tokens()) {
        throw Error("budget-not-line-aligned", "budget " + std::to_string(cfg.budget));
    }
    if (!cfg.compresses()) {
        return;
    }
    // at each compression the store holds exactly `budget` entries, and mid must supply w of them
    const std::size_t needed = cfg.n_init + (cfg.recent_lines + 1) * spec.w;
    if (cfg.budget < needed) {
        throw Error("budget-too-small", "budget " + std::to_string(cfg.budget) + " < n_init + (r+1)*w = " +
                                            std::to_string(needed));
    }
}

inline BudgetConfig budget_from_ratio(const GridSpec& spec, const Rational& rho, const BudgetOverrides& ov = {}) {
    if (rho.num == 0 || rho > Rational(1, 1)) {
        throw Error("invalid-ratio", "rho must lie in (0, 1], got " + rho.str());
    }
    const auto budget = rho.scale_exact(spec.tokens());
    if (!budget || *budget % spec.w != 0) {
        throw Error("budget-not-line-aligned", "rho=" + rho.str() + " on " + to_string(spec) +
                                                   "; nearest valid rho: " + detail::nearest_valid_ratios(spec, rho));
    }

    BudgetConfig cfg;
    cfg.rho = rho;
    cfg.budget = *budget;
    cfg.n_init = ov.n_init.value_or(spec.w);
    if (ov.recent_lines) {
        cfg.recent_lines = *ov.recent_lines;
    } else if (cfg.compresses()) {
        const std::size_t spare = cfg.budget > cfg.n_init ? (cfg.budget - cfg.n_init) / spec.w : 0;
        cfg.recent_lines = std::clamp<std::size_t>(spare > 0 ? spare - 1 : 0, 1, default_recent_lines);
    } else {
        cfg.recent_lines = default_recent_lines;
    }
    validate_budget(spec, cfg, ov.allow_empty_regions);
    return cfg;
}

}  // namespace linear_kv
