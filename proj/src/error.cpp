// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#include "desta/error.hpp"

namespace desta {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::MalformedTimestamp: return "MalformedTimestamp";
    case ErrorKind::UnbalancedParentheses: return "UnbalancedParentheses";
    case ErrorKind::MalformedAttribute: return "MalformedAttribute";
    case ErrorKind::EmptyDocument: return "EmptyDocument";
    case ErrorKind::InvariantViolation: return "InvariantViolation";
    case ErrorKind::MissingSpan: return "MissingSpan";
    case ErrorKind::DuplicatePromptId: return "DuplicatePromptId";
    case ErrorKind::UnknownDomain: return "UnknownDomain";
    case ErrorKind::EmptyPool: return "EmptyPool";
    case ErrorKind::EmptyDomain: return "EmptyDomain";
    case ErrorKind::Transport: return "Transport";
    case ErrorKind::RemoteRefusal: return "RemoteRefusal";
    case ErrorKind::BudgetExceeded: return "BudgetExceeded";
    case ErrorKind::ScoringUnsupported: return "ScoringUnsupported";
    case ErrorKind::FixtureMiss: return "FixtureMiss";
    case ErrorKind::ZeroWeight: return "ZeroWeight";
    case ErrorKind::EmptyPlan: return "EmptyPlan";
    case ErrorKind::PlanMismatch: return "PlanMismatch";
    case ErrorKind::SchemaViolation: return "SchemaViolation";
    case ErrorKind::OutputLocked: return "OutputLocked";
    case ErrorKind::DeadLetterThreshold: return "DeadLetterThreshold";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::MixedScorers: return "MixedScorers";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::WidthMismatch: return "WidthMismatch";
    case ErrorKind::VocabOverflow: return "VocabOverflow";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::BadCheckpoint: return "BadCheckpoint";
    case ErrorKind::InvalidConstraint: return "InvalidConstraint";
    case ErrorKind::ZeroBackbone: return "ZeroBackbone";
    case ErrorKind::DomainMismatch: return "DomainMismatch";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::Io: return "Io";
    case ErrorKind::Config: return "Config";
    }
    return "Unknown";
}

namespace {

std::string format_message(ErrorKind kind, const std::string& message,
                           std::optional<std::size_t> line) {
    std::string out(to_string(kind));
    if (line) {
        out += " (line " + std::to_string(*line) + ")";
    }
    if (!message.empty()) {
        out += ": " + message;
    }
    return out;
}

} // namespace

Error::Error(ErrorKind kind, const std::string& message, std::optional<std::size_t> line)
    : std::runtime_error(format_message(kind, message, line)), kind_(kind), line_(line) {}

} // namespace desta
