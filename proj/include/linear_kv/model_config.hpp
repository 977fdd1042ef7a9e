// Copyright (C) 2026 The linear-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>

#include <json.hpp>

#include "linear_kv/error.hpp"

namespace linear_kv {

/// Shape of the toy decoder. Defaults are the desk-scale model.
struct ModelConfig {
    std::size_t layers = 4;
    std::size_t heads = 4;
    std::size_t kv_heads = 4;
    std::size_t dim = 32;
    std::size_t vocab = 256;
    std::size_t cond_len = 8;
    std::uint64_t seed = 0;

    std::size_t width() const noexcept { return heads * dim; }
    std::size_t kv_width() const noexcept { return kv_heads * dim; }
    std::size_t ffn_width() const noexcept { return 2 * width(); }
    std::size_t group() const noexcept { return heads / kv_heads; }

    void validate() const {
        if (layers == 0 || heads == 0 || kv_heads == 0 || dim == 0 || vocab == 0 || cond_len == 0) {
            throw Error("invalid-model", "all model counts must be >= 1");
        }
        if (heads % kv_heads != 0) {
            throw Error("invalid-model", "heads must be divisible by kv_heads");
        }
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& m) {
    j = {{"layers", m.layers}, {"heads", m.heads}, {"kv_heads", m.kv_heads}, {"dim", m.dim},
         {"vocab", m.vocab},   {"cond_len", m.cond_len}, {"seed", m.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& m) {
    j.at("layers").get_to(m.layers);
    j.at("heads").get_to(m.heads);
    j.at("kv_heads").get_to(m.kv_heads);
    j.at("dim").get_to(m.dim);
    j.at("vocab").get_to(m.vocab);
    j.at("cond_len").get_to(m.cond_len);
    j.at("seed").get_to(m.seed);
}

}  // namespace linear_kv
