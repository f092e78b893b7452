// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#pragma once

#include <cstdint>
#include <vector>

#include "desta/description.hpp"

namespace desta::testing {

/// Random valid descriptions over an alphabet rich in reserved characters.
std::vector<description::AudioDescription> description_corpus(std::uint64_t seed, std::size_t count);

} // namespace desta::testing
