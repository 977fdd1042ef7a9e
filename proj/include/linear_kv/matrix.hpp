// Copyright (C) 2026 The linear-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "linear_kv/error.hpp"

namespace linear_kv {

using Real = double;

/**
 * @brief Dense row-major matrix. Holds Q/K/V blocks and attention rows.
 */
template <typename T = Real>
class RowMatrix {
public:
    RowMatrix() = default;

    RowMatrix(std::size_t rows, std::size_t cols, T fill = T{0})
        : m_rows(rows), m_cols(cols), m_data(rows * cols, fill) {}

    RowMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
        : m_rows(rows), m_cols(cols), m_data(std::move(data)) {
        if (m_data.size() != rows * cols) {
            throw Error("shape-mismatch", "data length " + std::to_string(m_data.size()) + " != " +
                                              std::to_string(rows) + "x" + std::to_string(cols));
        }
    }

    static RowMatrix from_rows(std::initializer_list<std::initializer_list<T>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r == 0 ? 0 : rows.begin()->size();
        std::vector<T> data;
        data.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) {
                throw Error("shape-mismatch", "ragged row list");
            }
            data.insert(data.end(), row.begin(), row.end());
        }
        return RowMatrix(r, c, std::move(data));
    }

    std::size_t rows() const noexcept { return m_rows; }
    std::size_t cols() const noexcept { return m_cols; }
    bool empty() const noexcept { return m_data.empty(); }

    T& operator()(std::size_t r, std::size_t c) { return m_data[r * m_cols + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return m_data[r * m_cols + c]; }

    std::span<T> row(std::size_t r) { return {m_data.data() + r * m_cols, m_cols}; }
    std::span<const T> row(std::size_t r) const { return {m_data.data() + r * m_cols, m_cols}; }

    std::span<T> data() noexcept { return m_data; }
    std::span<const T> data() const noexcept { return m_data; }

    bool all_finite() const {
        return std::all_of(m_data.begin(), m_data.end(), [](T v) { return std::isfinite(v); });
    }

    friend bool operator==(const RowMatrix&, const RowMatrix&) = default;

private:
    std::size_t m_rows = 0;
    std::size_t m_cols = 0;
    std::vector<T> m_data;
};

template <typename T>
void require_finite(const RowMatrix<T>& m, const char* what) {
    if (!m.all_finite()) {
        throw Error("non-finite-value", what);
    }
}

}  // namespace linear_kv
