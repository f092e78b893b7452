// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#include <iostream>
#include <string>
#include <vector>

#include "desta/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return desta::cli::dispatch(args, std::cout, std::cerr);
}
