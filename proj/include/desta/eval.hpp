// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace desta::eval {

/// One output constraint on a response.
class ConstraintSpec {
public:
    enum class Kind { MaxWords, ValidJson, RegexMustMatch };

    static ConstraintSpec max_words(std::size_t n);
    static ConstraintSpec valid_json();
    static ConstraintSpec regex_must_match(std::string pattern);

    /// {"kind": "max_words", "n": 5} | {"kind": "valid_json"} |
    /// {"kind": "regex_must_match", "pattern": "..."}. Throws
    /// Error(InvalidConstraint).
    static ConstraintSpec from_json(const nlohmann::json& j);
    nlohmann::ordered_json to_json() const;

    Kind kind() const { return kind_; }
    bool check(std::string_view response) const;

private:
    Kind kind_ = Kind::ValidJson;
    std::size_t max_words_ = 0;
    std::string pattern_;
    std::regex regex_;
};

std::string to_string(ConstraintSpec::Kind kind);

struct EvalItem {
    std::string task_id;
    std::string category;
    std::string prediction;
    std::string label;
    std::vector<ConstraintSpec> constraints;
};

struct MatchOptions {
    bool choice_extractor = false; // compare the first standalone A-D token
};

/// Trim surrounding whitespace and ASCII case-fold.
std::string normalize_answer(std::string_view text);

/// First standalone letter A-D (either case), e.g. "(b)" or "Answer: C.".
std::optional<char> extract_choice(std::string_view text);

bool is_correct(const EvalItem& item, const MatchOptions& options);

struct AccuracyReport {
    std::map<std::string, double> per_category; // categories with no items are absent
    std::map<std::string, double> per_task;
    double micro = 0.0;
    double macro = 0.0; // unweighted mean over tasks
    std::size_t items = 0;
    std::size_t correct = 0;
    MatchOptions options;
};

/// Throws Error(EmptyInput) on an empty list.
AccuracyReport accuracy_report(const std::vector<EvalItem>& items, const MatchOptions& options = {});

struct ConstrainedResponse {
    std::string text;
    std::vector<ConstraintSpec> constraints;
};

/// Percent of responses passing all of their constraints. Every response
/// needs at least one constraint (Error(InvalidConstraint) otherwise).
double if_rate(const std::vector<ConstrainedResponse>& responses);

/// 100 * (lalm - backbone) / backbone. Throws Error(ZeroBackbone) when
/// backbone <= 0.
double forgetting_rate(double ifrate_lalm, double ifrate_backbone);

/// Two decimals with an explicit sign, e.g. "+0.40", "-50.00", "0.00".
std::string format_signed(double value);

struct RelativeTable {
    std::map<std::string, double> relative;
    std::size_t win_count = 0;
    double average = 0.0;
};

/// Throws Error(DomainMismatch) unless both maps share the same non-empty key
/// set.
RelativeTable relative_scores(const std::map<std::string, double>& model,
                              const std::map<std::string, double>& baseline);

/// Line records {task_id, category, prediction, label, constraints?}.
std::vector<EvalItem> parse_responses(std::string_view text);
std::vector<EvalItem> load_responses(const std::filesystem::path& path);

struct BaselineFile {
    std::optional<std::map<std::string, double>> model; // absent: use per-category accuracy
    std::map<std::string, double> baseline;
};

/// Either a flat {domain: score} object, or {"model": {...}, "baseline": {...}}.
BaselineFile load_baseline(const std::filesystem::path& path);

struct EvalReport {
    AccuracyReport accuracy;
    std::optional<double> ifrate;
    std::size_t constrained_responses = 0;
    std::optional<double> backbone_ifrate;
    std::optional<double> delta;
    std::optional<RelativeTable> relative;
};

EvalReport evaluate(const std::vector<EvalItem>& items, const MatchOptions& options,
                    std::optional<double> backbone_ifrate, const std::optional<BaselineFile>& baseline);

nlohmann::ordered_json to_json(const EvalReport& report);

} // namespace desta::eval
