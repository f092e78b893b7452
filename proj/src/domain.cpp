// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#include "desta/domain.hpp"

#include <string>

#include "desta/error.hpp"

namespace desta {

std::string_view to_string(Domain domain) {
    switch (domain) {
    case Domain::Speech: return "speech";
    case Domain::Sound: return "sound";
    case Domain::Music: return "music";
    }
    return "unknown";
}

std::optional<Domain> parse_domain(std::string_view text) {
    for (Domain d : kAllDomains) {
        if (to_string(d) == text) {
            return d;
        }
    }
    return std::nullopt;
}

Domain require_domain(std::string_view text) {
    if (auto d = parse_domain(text)) {
        return *d;
    }
    throw Error(ErrorKind::UnknownDomain, "'" + std::string(text) + "'");
}

} // namespace desta
