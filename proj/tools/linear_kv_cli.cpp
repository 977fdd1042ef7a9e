// Copyright (C) 2026 The linear-kv Authors
// SPDX-License-Identifier: Apache-2.0

#include "linear_kv/cli.hpp"

int main(int argc, char** argv) { return linear_kv::cli::run(argc, argv); }
