// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#include "desta/eval.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "desta/error.hpp"

namespace desta::eval {

namespace {

bool is_space(char c) {
    return std::isspace(static_cast<unsigned char>(c)) != 0;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && is_space(s.front())) {
        s.remove_prefix(1);
    }
    while (!s.empty() && is_space(s.back())) {
        s.remove_suffix(1);
    }
    return s;
}

std::size_t word_count(std::string_view s) {
    std::size_t n = 0;
    bool in_word = false;
    for (char c : s) {
        if (is_space(c)) {
            in_word = false;
        } else if (!in_word) {
            in_word = true;
            ++n;
        }
    }
    return n;
}

double percent(std::size_t num, std::size_t den) {
    return 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

} // namespace

std::string to_string(ConstraintSpec::Kind kind) {
    switch (kind) {
    case ConstraintSpec::Kind::MaxWords:
        return "max_words";
    case ConstraintSpec::Kind::ValidJson:
        return "valid_json";
    case ConstraintSpec::Kind::RegexMustMatch:
        return "regex_must_match";
    }
    return "unknown";
}

ConstraintSpec ConstraintSpec::max_words(std::size_t n) {
    if (n < 1) {
        throw Error(ErrorKind::InvalidConstraint, "max_words needs n >= 1");
    }
    ConstraintSpec c;
    c.kind_ = Kind::MaxWords;
    c.max_words_ = n;
    return c;
}

ConstraintSpec ConstraintSpec::valid_json() {
    return ConstraintSpec{};
}

ConstraintSpec ConstraintSpec::regex_must_match(std::string pattern) {
    ConstraintSpec c;
    c.kind_ = Kind::RegexMustMatch;
    try {
        c.regex_ = std::regex(pattern, std::regex::ECMAScript);
    } catch (const std::regex_error& e) {
        throw Error(ErrorKind::InvalidConstraint, "pattern '" + pattern + "' does not compile: " + e.what());
    }
    c.pattern_ = std::move(pattern);
    return c;
}

ConstraintSpec ConstraintSpec::from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string()) {
        throw Error(ErrorKind::InvalidConstraint, "constraint needs a string 'kind'");
    }
    const auto kind = j["kind"].get<std::string>();
    if (kind == "max_words") {
        if (!j.contains("n") || !j["n"].is_number_integer() || j["n"].get<long long>() < 1) {
            throw Error(ErrorKind::InvalidConstraint, "max_words needs integer n >= 1");
        }
        return max_words(j["n"].get<std::size_t>());
    }
    if (kind == "valid_json") {
        return valid_json();
    }
    if (kind == "regex_must_match") {
        if (!j.contains("pattern") || !j["pattern"].is_string()) {
            throw Error(ErrorKind::InvalidConstraint, "regex_must_match needs a string pattern");
        }
        return regex_must_match(j["pattern"].get<std::string>());
    }
    throw Error(ErrorKind::InvalidConstraint, "unknown constraint kind '" + kind + "'");
}

nlohmann::ordered_json ConstraintSpec::to_json() const {
    nlohmann::ordered_json j;
    j["kind"] = to_string(kind_);
    if (kind_ == Kind::MaxWords) {
        j["n"] = max_words_;
    } else if (kind_ == Kind::RegexMustMatch) {
        j["pattern"] = pattern_;
    }
    return j;
}

bool ConstraintSpec::check(std::string_view response) const {
    switch (kind_) {
    case Kind::MaxWords:
        return word_count(response) <= max_words_;
    case Kind::ValidJson:
        return nlohmann::json::accept(trim(response));
    case Kind::RegexMustMatch:
        return std::regex_search(response.begin(), response.end(), regex_);
    }
    return false;
}

std::string normalize_answer(std::string_view text) {
    std::string out(trim(text));
    for (auto& c : out) {
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
}

std::optional<char> extract_choice(std::string_view text) {
    auto word_char = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_'; };
    for (std::size_t i = 0; i < text.size(); ++i) {
        char up = static_cast<char>(std::toupper(static_cast<unsigned char>(text[i])));
        if (up < 'A' || up > 'D') {
            continue;
        }
        bool left = i == 0 || !word_char(text[i - 1]);
        bool right = i + 1 == text.size() || !word_char(text[i + 1]);
        if (left && right) {
            return up;
        }
    }
    return std::nullopt;
}

bool is_correct(const EvalItem& item, const MatchOptions& options) {
    if (options.choice_extractor) {
        auto p = extract_choice(item.prediction);
        auto l = extract_choice(item.label);
        if (p && l) {
            return *p == *l;
        }
    }
    return normalize_answer(item.prediction) == normalize_answer(item.label);
}

AccuracyReport accuracy_report(const std::vector<EvalItem>& items, const MatchOptions& options) {
    if (items.empty()) {
        throw Error(ErrorKind::EmptyInput, "no evaluation items");
    }
    struct Tally {
        std::size_t correct = 0;
        std::size_t total = 0;
    };
    std::map<std::string, Tally> categories;
    std::map<std::string, Tally> tasks;
    AccuracyReport report;
    report.options = options;
    for (const auto& item : items) {
        const bool ok = is_correct(item, options);
        for (Tally* t : {&categories[item.category], &tasks[item.task_id]}) {
            t->correct += ok ? 1 : 0;
            ++t->total;
        }
        report.correct += ok ? 1 : 0;
        ++report.items;
    }
    for (const auto& [name, t] : categories) {
        if (!name.empty()) {
            report.per_category[name] = percent(t.correct, t.total);
        }
    }
    double sum = 0.0;
    for (const auto& [name, t] : tasks) {
        report.per_task[name] = percent(t.correct, t.total);
        sum += report.per_task[name];
    }
    report.micro = percent(report.correct, report.items);
    report.macro = sum / static_cast<double>(tasks.size());
    return report;
}

double if_rate(const std::vector<ConstrainedResponse>& responses) {
    if (responses.empty()) {
        throw Error(ErrorKind::EmptyInput, "no responses");
    }
    std::size_t passed = 0;
    for (std::size_t i = 0; i < responses.size(); ++i) {
        const auto& r = responses[i];
        if (r.constraints.empty()) {
            throw Error(ErrorKind::InvalidConstraint, "response " + std::to_string(i) + " has no constraint");
        }
        bool ok = true;
        for (const auto& c : r.constraints) {
            ok = ok && c.check(r.text);
        }
        passed += ok ? 1 : 0;
    }
    return percent(passed, responses.size());
}

double forgetting_rate(double ifrate_lalm, double ifrate_backbone) {
    if (!(ifrate_backbone > 0.0)) {
        throw Error(ErrorKind::ZeroBackbone, "backbone IFrate must be positive");
    }
    return 100.0 * (ifrate_lalm - ifrate_backbone) / ifrate_backbone;
}

std::string format_signed(double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f", value);
    std::string s = buf;
    if (s == "-0.00") {
        return "0.00";
    }
    if (s != "0.00" && s.front() != '-') {
        s.insert(s.begin(), '+');
    }
    return s;
}

RelativeTable relative_scores(const std::map<std::string, double>& model,
                              const std::map<std::string, double>& baseline) {
    if (model.empty()) {
        throw Error(ErrorKind::DomainMismatch, "no domains");
    }
    for (const auto& [k, _] : model) {
        if (!baseline.contains(k)) {
            throw Error(ErrorKind::DomainMismatch, "domain '" + k + "' missing from baseline");
        }
    }
    for (const auto& [k, _] : baseline) {
        if (!model.contains(k)) {
            throw Error(ErrorKind::DomainMismatch, "domain '" + k + "' missing from model scores");
        }
    }
    RelativeTable t;
    double sum = 0.0;
    for (const auto& [k, score] : model) {
        double rel = score - baseline.at(k);
        t.relative[k] = rel;
        t.win_count += rel > 0.0 ? 1 : 0;
        sum += rel;
    }
    t.average = sum / static_cast<double>(model.size());
    return t;
}

std::vector<EvalItem> parse_responses(std::string_view text) {
    std::vector<EvalItem> items;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw Error(ErrorKind::SchemaViolation, e.what(), line_no);
        }
        if (!obj.is_object()) {
            throw Error(ErrorKind::SchemaViolation, "record must be an object", line_no);
        }
        EvalItem item;
        for (auto [key, slot] : {std::pair{"task_id", &item.task_id}, std::pair{"category", &item.category},
                                 std::pair{"prediction", &item.prediction}, std::pair{"label", &item.label}}) {
            if (!obj.contains(key) || !obj[key].is_string()) {
                throw Error(ErrorKind::SchemaViolation, std::string("field '") + key + "' must be a string",
                            line_no);
            }
            *slot = obj[key].get<std::string>();
        }
        if (auto it = obj.find("constraints"); it != obj.end()) {
            if (!it->is_array()) {
                throw Error(ErrorKind::InvalidConstraint, "'constraints' must be an array", line_no);
            }
            for (const auto& c : *it) {
                try {
                    item.constraints.push_back(ConstraintSpec::from_json(c));
                } catch (const Error& e) {
                    throw Error(ErrorKind::InvalidConstraint, e.what(), line_no);
                }
            }
        }
        items.push_back(std::move(item));
    }
    return items;
}

std::vector<EvalItem> load_responses(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::Io, "cannot open " + path.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_responses(buf.str());
}

namespace {

std::map<std::string, double> score_map(const nlohmann::json& j, const std::string& where) {
    if (!j.is_object()) {
        throw Error(ErrorKind::SchemaViolation, where + " must be an object of domain scores");
    }
    std::map<std::string, double> out;
    for (const auto& [k, v] : j.items()) {
        if (!v.is_number()) {
            throw Error(ErrorKind::SchemaViolation, where + "." + k + " must be a number");
        }
        out[k] = v.get<double>();
    }
    return out;
}

} // namespace

BaselineFile load_baseline(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::Io, "cannot open " + path.string());
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::SchemaViolation, path.string() + ": " + e.what());
    }
    BaselineFile out;
    if (j.is_object() && j.contains("baseline")) {
        out.baseline = score_map(j["baseline"], "baseline");
        if (j.contains("model")) {
            out.model = score_map(j["model"], "model");
        }
    } else {
        out.baseline = score_map(j, "baseline");
    }
    return out;
}

EvalReport evaluate(const std::vector<EvalItem>& items, const MatchOptions& options,
                    std::optional<double> backbone_ifrate, const std::optional<BaselineFile>& baseline) {
    EvalReport report;
    report.accuracy = accuracy_report(items, options);
    std::vector<ConstrainedResponse> constrained;
    for (const auto& item : items) {
        if (!item.constraints.empty()) {
            constrained.push_back({item.prediction, item.constraints});
        }
    }
    report.constrained_responses = constrained.size();
    if (!constrained.empty()) {
        report.ifrate = if_rate(constrained);
    }
    if (backbone_ifrate) {
        if (!report.ifrate) {
            throw Error(ErrorKind::InvalidConstraint, "a backbone IFrate needs responses with constraints");
        }
        report.backbone_ifrate = backbone_ifrate;
        report.delta = forgetting_rate(*report.ifrate, *backbone_ifrate);
    }
    if (baseline) {
        report.relative =
            relative_scores(baseline->model.value_or(report.accuracy.per_category), baseline->baseline);
    }
    return report;
}

nlohmann::ordered_json to_json(const EvalReport& report) {
    nlohmann::ordered_json j;
    const auto& acc = report.accuracy;
    j["normalization"] = "trim+casefold";
    j["choice_extractor"] = acc.options.choice_extractor;
    j["accuracy"] = {{"items", acc.items},
                     {"correct", acc.correct},
                     {"micro", acc.micro},
                     {"macro", acc.macro},
                     {"per_category", acc.per_category},
                     {"per_task", acc.per_task}};
    if (report.ifrate) {
        j["ifrate"] = *report.ifrate;
        j["constrained_responses"] = report.constrained_responses;
    }
    if (report.delta) {
        j["backbone_ifrate"] = *report.backbone_ifrate;
        j["delta"] = *report.delta;
        j["delta_display"] = format_signed(*report.delta);
    }
    if (report.relative) {
        j["relative"] = {{"scores", report.relative->relative},
                         {"win_count", report.relative->win_count},
                         {"average", report.relative->average}};
    }
    return j;
}

} // namespace desta::eval
