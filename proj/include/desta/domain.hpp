// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace desta {

enum class Domain { Speech, Sound, Music };

inline constexpr std::array<Domain, 3> kAllDomains = {Domain::Speech, Domain::Sound, Domain::Music};

std::string_view to_string(Domain domain);

/// Returns nullopt for anything other than `speech`, `sound` or `music`.
std::optional<Domain> parse_domain(std::string_view text);

/// Throws Error(UnknownDomain) on failure.
Domain require_domain(std::string_view text);

} // namespace desta
