// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace desta {

enum class ErrorKind {
    // description_schema
    MalformedTimestamp,
    UnbalancedParentheses,
    MalformedAttribute,
    EmptyDocument,
    InvariantViolation,
    MissingSpan,
    // prompt_pool
    DuplicatePromptId,
    UnknownDomain,
    EmptyPool,
    EmptyDomain,
    // llm_backend
    Transport,
    RemoteRefusal,
    BudgetExceeded,
    ScoringUnsupported,
    FixtureMiss,
    // forge_pipeline
    ZeroWeight,
    EmptyPlan,
    PlanMismatch,
    SchemaViolation,
    OutputLocked,
    DeadLetterThreshold,
    // mismatch_probe
    EmptyDataset,
    MixedScorers,
    // adapter_core
    ShapeMismatch,
    WidthMismatch,
    VocabOverflow,
    NonFinite,
    BadCheckpoint,
    // eval_harness
    InvalidConstraint,
    ZeroBackbone,
    DomainMismatch,
    EmptyInput,
    // general
    Io,
    Config,
};

std::string_view to_string(ErrorKind kind);

/// Typed domain error. Every failure the toolkit reports to a caller is one of
/// these; `line()` is set when the error refers to a line of an input file.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message,
          std::optional<std::size_t> line = std::nullopt);

    ErrorKind kind() const noexcept { return kind_; }
    std::optional<std::size_t> line() const noexcept { return line_; }

private:
    ErrorKind kind_;
    std::optional<std::size_t> line_;
};

} // namespace desta
