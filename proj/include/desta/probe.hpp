// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "desta/forge.hpp"
#include "desta/llm_backend.hpp"

namespace desta::probe {

/// How targets are conditioned when scored; recorded in every report.
inline constexpr const char* kConvention =
    "token-weighted corpus perplexity of targets conditioned on '{description} {prompt}', no system prompt";

struct PplReport {
    std::string dataset_label;
    std::string scorer_model;
    std::int64_t token_count = 0;
    double total_nll = 0.0;
    double ppl = 1.0;
};

/// exp(total_nll / token_count); combining partial reports is exact because
/// only the sums are carried.
PplReport make_report(std::string label, std::string scorer, std::int64_t tokens, double nll);
PplReport merge_reports(const PplReport& a, const PplReport& b);

/// Scores each target given compose_request(description, prompt). Per-triplet
/// sums are reduced in input order so the result does not depend on
/// `parallelism`. Throws Error(EmptyDataset | ScoringUnsupported | Transport).
PplReport corpus_perplexity(llm::GenerationBackend& scorer,
                            const std::vector<forge::Triplet>& triplets,
                            std::string dataset_label = "dataset", std::size_t parallelism = 1);

struct ComparisonTable {
    std::vector<PplReport> reports;
    std::string argmin_label; // first label wins ties
};

/// Throws Error(MixedScorers) if reports come from different scorers, and
/// Error(EmptyInput) on fewer than two reports.
ComparisonTable compare_reports(std::vector<PplReport> reports);

ComparisonTable compare_sources(
    llm::GenerationBackend& scorer,
    const std::vector<std::pair<std::string, std::vector<forge::Triplet>>>& datasets,
    std::size_t parallelism = 1);

nlohmann::ordered_json to_json(const PplReport& report);
nlohmann::ordered_json to_json(const ComparisonTable& table);

} // namespace desta::probe
