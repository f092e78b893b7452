// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "desta/domain.hpp"
#include "desta/rng.hpp"

namespace desta::prompt {

struct PromptRecord {
    std::string prompt_id;
    Domain domain = Domain::Speech;
    std::string text;
    bool operator==(const PromptRecord&) const = default;
};

/// Immutable instruction pool with a per-domain index.
class PromptPool {
public:
    PromptPool() = default;

    /// Throws Error(DuplicatePromptId | EmptyPool | SchemaViolation).
    static PromptPool from_records(std::vector<PromptRecord> records);

    const std::vector<PromptRecord>& records() const { return records_; }
    std::size_t size() const { return records_.size(); }

    /// Positions into records(), in file order.
    std::span<const std::size_t> domain_indices(Domain domain) const;

    const PromptRecord* find(std::string_view prompt_id) const;

private:
    std::vector<PromptRecord> records_;
    std::array<std::vector<std::size_t>, 3> by_domain_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

/// Line-delimited JSON records with fields `prompt_id`, `domain`, `text`.
/// Errors carry the offending line.
PromptPool load_pool(const std::filesystem::path& path);

PromptPool parse_pool(std::string_view text);

/// Uniform draw over the domain's prompts; consumes draws from `rng` only.
/// Throws Error(EmptyDomain).
const PromptRecord& sample_prompt(const PromptPool& pool, Rng& rng, Domain domain);

/// "{description} {prompt}", nothing else.
std::string compose_request(std::string_view description, std::string_view prompt);

} // namespace desta::prompt
