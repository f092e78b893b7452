// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace desta::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomainError = 1;
inline constexpr int kExitUsage = 2;

using EnvLookup = std::function<std::optional<std::string>(const std::string& name)>;

/// Process environment.
std::optional<std::string> process_env(const std::string& name);

/// Runs one command line (without the program name). Data goes to `out` or
/// to files named by flags; diagnostics go to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
             const EnvLookup& env = process_env);

} // namespace desta::cli
