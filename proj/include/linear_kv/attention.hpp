// Copyright (C) 2026 The linear-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "linear_kv/error.hpp"
#include "linear_kv/matrix.hpp"

namespace linear_kv {

/// In-place max-subtracted softmax over one row. The row must be non-empty.
template <typename T>
void softmax_inplace(std::span<T> row) {
    const T peak = *std::max_element(row.begin(), row.end());
    T total = T{0};
    for (auto& x : row) {
        x = std::exp(x - peak);
        total += x;
    }
    const T inv = T{1} / total;
    for (auto& x : row) {
        x *= inv;
    }
}

template <typename T>
RowMatrix<T> softmax_rows(const RowMatrix<T>& m) {
    if (m.cols() == 0) {
        throw Error("empty-softmax-domain");
    }
    require_finite(m, "softmax input");
    RowMatrix<T> out = m;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        softmax_inplace(out.row(r));
    }
    return out;
}

template <typename T>
T default_scale(std::size_t dim) {
    return T{1} / std::sqrt(static_cast<T>(dim));
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
    T acc = T{0};
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

/**
 * @brief out[j] = dot(q, row j) * scale for `count` contiguous rows of width q.size().
 *
 * Four rows run side by side; each keeps the sequential summation order of dot(), so results
 * are bit-identical to the one-row loop.
 */
template <typename T>
void scaled_dots(std::span<const T> q, const T* rows, std::size_t count, T scale, T* out) {
    const std::size_t d = q.size();
    std::size_t j = 0;
    for (; j + 4 <= count; j += 4) {
        const T* r0 = rows + j * d;
        const T* r1 = r0 + d;
        const T* r2 = r1 + d;
        const T* r3 = r2 + d;
        T a0 = T{0}, a1 = T{0}, a2 = T{0}, a3 = T{0};
        for (std::size_t c = 0; c < d; ++c) {
            const T x = q[c];
            a0 += x * r0[c];
            a1 += x * r1[c];
            a2 += x * r2[c];
            a3 += x * r3[c];
        }
        out[j] = a0 * scale;
        out[j + 1] = a1 * scale;
        out[j + 2] = a2 * scale;
        out[j + 3] = a3 * scale;
    }
    for (; j < count; ++j) {
        out[j] = dot<T>(q, std::span<const T>(rows + j * d, d)) * scale;
    }
}

/**
 * @brief Single-head scaled dot-product attention of one query over a key/value block.
 *
 * q is 1xd, keys and values are mxd. Returns softmax(q K^T * scale) V as a 1xd matrix.
 */
template <typename T>
RowMatrix<T> attention(const RowMatrix<T>& q, const RowMatrix<T>& keys, const RowMatrix<T>& values, T scale) {
    if (q.rows() != 1 || keys.cols() != q.cols() || values.cols() != q.cols() || keys.rows() != values.rows()) {
        throw Error("shape-mismatch", "attention expects q[1xd], K[mxd], V[mxd]");
    }
    if (keys.rows() == 0) {
        throw Error("empty-cache");
    }
    require_finite(q, "query");
    require_finite(keys, "keys");
    require_finite(values, "values");

    std::vector<T> weights(keys.rows());
    for (std::size_t j = 0; j < keys.rows(); ++j) {
        weights[j] = dot<T>(q.row(0), keys.row(j)) * scale;
    }
    softmax_inplace(std::span<T>(weights));

    RowMatrix<T> out(1, q.cols());
    for (std::size_t j = 0; j < keys.rows(); ++j) {
        const auto v = values.row(j);
        for (std::size_t c = 0; c < v.size(); ++c) {
            out(0, c) += weights[j] * v[c];
        }
    }
    return out;
}

template <typename T>
RowMatrix<T> attention(const RowMatrix<T>& q, const RowMatrix<T>& keys, const RowMatrix<T>& values) {
    return attention(q, keys, values, default_scale<T>(q.cols()));
}

/// A contiguous run of `count` key/value rows, each `dim` wide.
template <typename T>
struct KVBlock {
    std::span<const T> keys;
    std::span<const T> values;
    std::size_t count = 0;
};

/**
 * @brief Attention of one query over the concatenation of several KV blocks, without copying them.
 *
 * This is the decode-loop kernel: the conditional prefix and the compacted visual store are
 * separate blocks. `weights` receives the normalized attention row (size = total keys) and `out`
 * the attended value vector.
 */
template <typename T>
void attend_blocks(std::span<const T> q, std::span<const KVBlock<T>> blocks, T scale, std::span<T> out,
                   std::vector<T>& weights) {
    const std::size_t dim = q.size();
    std::size_t total = 0;
    for (const auto& b : blocks) {
        total += b.count;
    }
    if (total == 0) {
        throw Error("empty-cache");
    }
    weights.resize(total);

    std::size_t j = 0;
    for (const auto& b : blocks) {
        scaled_dots<T>(q, b.keys.data(), b.count, scale, weights.data() + j);
        j += b.count;
    }
    softmax_inplace(std::span<T>(weights));

    std::fill(out.begin(), out.end(), T{0});
    j = 0;
    for (const auto& b : blocks) {
        for (std::size_t r = 0; r < b.count; ++r, ++j) {
            const T w = weights[j];
            const T* v = b.values.data() + r * dim;
            for (std::size_t c = 0; c < dim; ++c) {
                out[c] += w * v[c];
            }
        }
    }
}

}  // namespace linear_kv
