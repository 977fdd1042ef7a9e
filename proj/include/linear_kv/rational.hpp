// Copyright (C) 2026 The linear-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <charconv>
#include <compare>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>

#include "linear_kv/error.hpp"

namespace linear_kv {

/// Exact non-negative fraction, always stored in lowest terms.
struct Rational {
    std::uint64_t num = 1;
    std::uint64_t den = 1;

    constexpr Rational() = default;
    Rational(std::uint64_t n, std::uint64_t d) : num(n), den(d) {
        if (den == 0) {
            throw Error("invalid-ratio", "zero denominator");
        }
        const auto g = std::gcd(num, den);
        if (g > 1) {
            num /= g;
            den /= g;
        }
    }

    double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }

    /// value * count if it is an integer.
    std::optional<std::uint64_t> scale_exact(std::uint64_t count) const {
        const std::uint64_t prod = num * count;
        if (prod % den != 0) {
            return std::nullopt;
        }
        return prod / den;
    }

    std::string str() const { return den == 1 ? std::to_string(num) : std::to_string(num) + "/" + std::to_string(den); }

    friend bool operator==(const Rational& a, const Rational& b) { return a.num == b.num && a.den == b.den; }
    friend std::strong_ordering operator<=>(const Rational& a, const Rational& b) {
        return (a.num * b.den) <=> (b.num * a.den);
    }
};

namespace detail {
inline std::uint64_t parse_u64(std::string_view s, std::string_view what) {
    std::uint64_t v = 0;
    const auto* first = s.data();
    const auto* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (s.empty() || ec != std::errc{} || ptr != last) {
        throw Error("invalid-ratio", "cannot parse '" + std::string(what) + "'");
    }
    return v;
}
}  // namespace detail

/// Parses "a/b" or a bare integer.
inline Rational parse_rational(std::string_view text) {
    const auto slash = text.find('/');
    if (slash == std::string_view::npos) {
        return Rational(detail::parse_u64(text, text), 1);
    }
    return Rational(detail::parse_u64(text.substr(0, slash), text), detail::parse_u64(text.substr(slash + 1), text));
}

}  // namespace linear_kv
