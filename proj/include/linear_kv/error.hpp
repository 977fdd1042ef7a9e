// Copyright (C) 2026 The linear-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace linear_kv {

/**
 * @brief Exception carrying a stable, machine-readable error code (e.g. "shape-mismatch").
 *
 * what() renders as "<code>" or "<code>: <detail>".
 */
class Error : public std::runtime_error {
public:
    explicit Error(std::string code, const std::string& detail = {})
        : std::runtime_error(detail.empty() ? code : code + ": " + detail), m_code(std::move(code)) {}

    const std::string& code() const noexcept { return m_code; }

private:
    std::string m_code;
};

}  // namespace linear_kv
