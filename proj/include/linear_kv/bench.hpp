// Copyright (C) 2026 The linear-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <vector>

#include "linear_kv/error.hpp"
#include "linear_kv/trace.hpp"

namespace linear_kv {

/// Cached KV entries per step (conditional + visual over all layers and kv-heads).
struct MemoryReport {
    std::vector<std::size_t> entries;
    std::vector<std::size_t> visual_entries;
    /// Max visual entries held by any single head at any step.
    std::size_t peak_head_visual = 0;
    std::size_t peak_entries = 0;

    /// K and V, `dim` scalars each.
    std::uint64_t bytes(std::size_t step, std::size_t dim, std::size_t bytes_per_scalar) const {
        return static_cast<std::uint64_t>(entries.at(step)) * 2 * dim * bytes_per_scalar;
    }
    std::uint64_t peak_bytes(std::size_t dim, std::size_t bytes_per_scalar) const {
        return static_cast<std::uint64_t>(peak_entries) * 2 * dim * bytes_per_scalar;
    }
};

inline MemoryReport memory_report(const DecodeTrace& t) {
    MemoryReport r;
    const std::size_t cond = t.model.layers * t.model.kv_heads * t.model.cond_len;
    for (const auto& s : t.steps) {
        std::size_t visual = 0;
        for (const auto len : s.visual_len) {
            visual += len;
            r.peak_head_visual = std::max(r.peak_head_visual, len);
        }
        r.visual_entries.push_back(visual);
        r.entries.push_back(cond + visual);
        r.peak_entries = std::max(r.peak_entries, cond + visual);
    }
    return r;
}

/// 1 - peak(run) / peak(reference); the reference is a full-cache run of the same config.
inline double relative_saving(const MemoryReport& run, const MemoryReport& reference) {
    if (reference.peak_entries == 0) {
        return 0.0;
    }
    return 1.0 - static_cast<double>(run.peak_entries) / static_cast<double>(reference.peak_entries);
}

/// Per step: sum over layers and query heads of attended keys * dim * 2.
inline std::vector<std::uint64_t> flops_proxy(const DecodeTrace& t) {
    std::vector<std::uint64_t> out;
    out.reserve(t.steps.size());
    const std::size_t group = t.model.heads / t.model.kv_heads;
    for (const auto& s : t.steps) {
        std::uint64_t work = 0;
        for (const auto len : s.visual_len) {
            work += static_cast<std::uint64_t>(group) * (t.model.cond_len + len) * t.model.dim * 2;
        }
        out.push_back(work);
    }
    return out;
}

/// Mean of values[from, to).
inline double mean_over(const std::vector<std::uint64_t>& values, std::size_t from, std::size_t to) {
    if (to <= from) {
        return 0.0;
    }
    double acc = 0;
    for (std::size_t i = from; i < to; ++i) {
        acc += static_cast<double>(values[i]);
    }
    return acc / static_cast<double>(to - from);
}

struct SplitThroughput {
    double first_half_rate = 0;   // tokens / s
    double second_half_rate = 0;  // tokens / s
    double ratio = 0;             // second / first
};

/// Tokens per second over steps [0, N/2) and [N/2, N): count / summed wall time.
inline SplitThroughput split_half_throughput(const std::vector<std::uint64_t>& step_ns) {
    if (step_ns.size() < 2) {
        throw Error("trace-missing-timings", "need at least two timed steps");
    }
    const std::size_t half = step_ns.size() / 2;
    auto rate = [&](std::size_t from, std::size_t to) {
        std::uint64_t ns = 0;
        for (std::size_t i = from; i < to; ++i) {
            ns += step_ns[i];
        }
        return ns == 0 ? 0.0 : static_cast<double>(to - from) * 1e9 / static_cast<double>(ns);
    };
    SplitThroughput out;
    out.first_half_rate = rate(0, half);
    out.second_half_rate = rate(half, step_ns.size());
    out.ratio = out.first_half_rate > 0 ? out.second_half_rate / out.first_half_rate : 0.0;
    return out;
}

inline SplitThroughput split_half_throughput(const DecodeTrace& t) {
    std::vector<std::uint64_t> ns;
    ns.reserve(t.steps.size());
    for (const auto& s : t.steps) {
        if (!s.step_ns) {
            throw Error("trace-missing-timings", "step " + std::to_string(s.step));
        }
        ns.push_back(*s.step_ns);
    }
    return split_half_throughput(ns);
}

inline constexpr const char* bench_csv_header = "step,policy,rho,entries,bytes_fp16,bytes_fp32,flops_proxy,step_ns";

/// Appends one CSV row per step (no header).
inline void write_bench_rows(std::ostream& os, const DecodeTrace& t, const std::string& policy_label) {
    const auto mem = memory_report(t);
    const auto flops = flops_proxy(t);
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
        os << t.steps[i].step << ',' << policy_label << ',' << t.budget.rho.str() << ',' << mem.entries[i] << ','
           << mem.bytes(i, t.model.dim, 2) << ',' << mem.bytes(i, t.model.dim, 4) << ',' << flops[i] << ',';
        if (t.steps[i].step_ns) {
            os << *t.steps[i].step_ns;
        }
        os << '\n';
    }
}

}  // namespace linear_kv
