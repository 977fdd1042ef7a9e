// Copyright (C) 2026 The linear-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Brute-force reference implementations. Nothing here calls into the kernels, policies or
// decoder it is used to check; shared inputs (weights, configs) are plain data.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <utility>
#include <vector>

#include "linear_kv/decoder.hpp"
#include "linear_kv/trace.hpp"

namespace linear_kv::oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

/// e^x / sum e^x, one row, via long double.
inline Vec softmax(const Vec& row) {
    long double peak = row[0];
    for (const double x : row) {
        peak = std::max<long double>(peak, x);
    }
    long double total = 0;
    std::vector<long double> e(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) {
        e[i] = std::exp(static_cast<long double>(row[i]) - peak);
        total += e[i];
    }
    Vec out(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) {
        out[i] = static_cast<double>(e[i] / total);
    }
    return out;
}

inline Vec attention(const Vec& q, const Mat& keys, const Mat& values) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.size()));
    Vec logits(keys.size());
    for (std::size_t j = 0; j < keys.size(); ++j) {
        double acc = 0;
        for (std::size_t c = 0; c < q.size(); ++c) {
            acc += q[c] * keys[j][c];
        }
        logits[j] = acc * scale;
    }
    const Vec w = softmax(logits);
    Vec out(values.empty() ? 0 : values[0].size(), 0.0);
    for (std::size_t j = 0; j < values.size(); ++j) {
        for (std::size_t c = 0; c < out.size(); ++c) {
            out[c] += w[j] * values[j][c];
        }
    }
    return out;
}

/// Per-query softmax over the mid keys, then the average over queries.
inline Vec saliency(const Mat& queries, const Mat& keys) {
    Vec acc(keys.size(), 0.0);
    for (const auto& q : queries) {
        Vec logits(keys.size());
        for (std::size_t j = 0; j < keys.size(); ++j) {
            double s = 0;
            for (std::size_t c = 0; c < q.size(); ++c) {
                s += q[c] * keys[j][c];
            }
            logits[j] = s / std::sqrt(static_cast<double>(q.size()));
        }
        const Vec w = softmax(logits);
        for (std::size_t j = 0; j < keys.size(); ++j) {
            acc[j] += w[j];
        }
    }
    for (auto& a : acc) {
        a /= static_cast<double>(queries.size());
    }
    return acc;
}

/// Full stable sort by (score, position); first k indices, ascending.
inline std::vector<std::size_t> bottom_k(const Vec& scores, const std::vector<std::size_t>& positions, std::size_t k) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return std::make_pair(scores[a], positions[a]) < std::make_pair(scores[b], positions[b]);
    });
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// Sum of the attention each visual position received, per (layer, kv-head), rebuilt from stored rows.
inline std::map<std::pair<std::size_t, std::size_t>, std::map<std::size_t, double>>
accumulated_attention(const DecodeTrace& t) {
    std::map<std::pair<std::size_t, std::size_t>, std::map<std::size_t, double>> out;
    const std::size_t group = t.model.heads / t.model.kv_heads;
    for (const auto& a : t.attention) {
        auto& m = out[{a.layer, a.head / group}];
        for (std::size_t i = 0; i < a.positions.size(); ++i) {
            m[a.positions[i]] += a.weights[i];
        }
    }
    return out;
}

struct ReferenceRun {
    std::vector<std::size_t> tokens;
    Vec final_hidden;
};

namespace detail {
inline Vec matvec(const RowMatrix<double>& m, const Vec& x) {
    Vec out(m.rows(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            out[r] += m(r, c) * x[c];
        }
    }
    return out;
}
inline Vec rms(const Vec& x) {
    double ss = 0;
    for (const double v : x) {
        ss += v * v;
    }
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + 1e-6);
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = x[i] * inv;
    }
    return out;
}
}  // namespace detail

/**
 * @brief Cache-free decoder: every step re-runs the whole causal sequence
 * [cond | begin-of-image, t_0 .. t_{p-1}] from scratch and reads the last position.
 */
inline ReferenceRun reference_generate(const ModelConfig& cfg, const ToyWeights& w,
                                       const std::vector<std::size_t>& cond, std::size_t steps) {
    ReferenceRun run;
    const std::size_t d = cfg.dim;
    const std::size_t group = cfg.heads / cfg.kv_heads;
    for (std::size_t p = 0; p < steps; ++p) {
        std::vector<std::size_t> ids = cond;
        ids.push_back(cfg.vocab);
        ids.insert(ids.end(), run.tokens.begin(), run.tokens.end());

        Mat xs;
        for (const auto id : ids) {
            const auto r = w.embed.row(id);
            xs.emplace_back(r.begin(), r.end());
        }
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            const auto& lw = w.layers[l];
            Mat qs, ks, vs;
            for (const auto& x : xs) {
                const Vec h = detail::rms(x);
                qs.push_back(detail::matvec(lw.wq, h));
                ks.push_back(detail::matvec(lw.wk, h));
                vs.push_back(detail::matvec(lw.wv, h));
            }
            for (std::size_t i = 0; i < xs.size(); ++i) {
                Vec att(cfg.width(), 0.0);
                for (std::size_t qh = 0; qh < cfg.heads; ++qh) {
                    const std::size_t kvh = qh / group;
                    const Vec q(qs[i].begin() + qh * d, qs[i].begin() + (qh + 1) * d);
                    Mat keys, values;
                    for (std::size_t j = 0; j <= i; ++j) {
                        keys.emplace_back(ks[j].begin() + kvh * d, ks[j].begin() + (kvh + 1) * d);
                        values.emplace_back(vs[j].begin() + kvh * d, vs[j].begin() + (kvh + 1) * d);
                    }
                    const Vec o = attention(q, keys, values);
                    std::copy(o.begin(), o.end(), att.begin() + qh * d);
                }
                const Vec proj = detail::matvec(lw.wo, att);
                for (std::size_t c = 0; c < proj.size(); ++c) {
                    xs[i][c] += proj[c];
                }
                Vec up = detail::matvec(lw.w_up, detail::rms(xs[i]));
                for (auto& u : up) {
                    u = u / (1.0 + std::exp(-u));
                }
                const Vec down = detail::matvec(lw.w_down, up);
                for (std::size_t c = 0; c < down.size(); ++c) {
                    xs[i][c] += down[c];
                }
            }
        }
        const Vec& last = xs.back();
        const Vec logits = detail::matvec(w.unembed, detail::rms(last));
        std::size_t best = 0;
        for (std::size_t i = 1; i < logits.size(); ++i) {
            if (logits[i] > logits[best]) {
                best = i;
            }
        }
        run.tokens.push_back(best);
        run.final_hidden = last;
    }
    return run;
}

}  // namespace linear_kv::oracle
