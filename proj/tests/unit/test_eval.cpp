// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#include <doctest.h>

#include "desta/error.hpp"
#include "desta/eval.hpp"
#include "fixtures.hpp"
#include "support.hpp"

using namespace desta;
using namespace desta::eval;
using desta::testing::TempDir;
using desta::testing::write_file;

namespace {

template <class Fn>
ErrorKind error_of(Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an error");
    return ErrorKind::Config;
}

EvalItem item(std::string task, std::string cat, std::string pred, std::string label) {
    return EvalItem{std::move(task), std::move(cat), std::move(pred), std::move(label), {}};
}

} // namespace

TEST_CASE("forgetting rate and its display") {
    CHECK(format_signed(forgetting_rate(93.89, 93.52)) == "+0.40");
    CHECK(forgetting_rate(93.89, 93.52) == doctest::Approx(100.0 * 0.37 / 93.52));
    CHECK(format_signed(forgetting_rate(71.5, 71.5)) == "0.00");
    CHECK(format_signed(forgetting_rate(50.0, 100.0)) == "-50.00");
    CHECK(format_signed(-0.001) == "0.00");
    CHECK(format_signed(12.345678) == "+12.35");
    CHECK(error_of([] { forgetting_rate(50.0, 0.0); }) == ErrorKind::ZeroBackbone);
    CHECK(error_of([] { forgetting_rate(50.0, -1.0); }) == ErrorKind::ZeroBackbone);
}

TEST_CASE("constraints") {
    auto five = ConstraintSpec::max_words(5);
    CHECK(five.check("one two three four five"));
    CHECK(five.check("  one\ttwo\nthree  "));
    CHECK_FALSE(five.check("one two three four five six"));
    CHECK(five.check(""));
    auto json = ConstraintSpec::valid_json();
    CHECK(json.check("{\"a\":1}"));
    CHECK(json.check("  [1, 2]\n"));
    CHECK_FALSE(json.check("{a:1}"));
    CHECK_FALSE(json.check("{\"a\":1} trailing"));
    auto re = ConstraintSpec::regex_must_match("^[A-D]\\.");
    CHECK(re.check("B. because"));
    CHECK_FALSE(re.check("E. no"));

    CHECK(ConstraintSpec::from_json({{"kind", "max_words"}, {"n", 3}}).kind() == ConstraintSpec::Kind::MaxWords);
    CHECK(ConstraintSpec::from_json({{"kind", "valid_json"}}).to_json().dump() == R"({"kind":"valid_json"})");
    CHECK(ConstraintSpec::from_json({{"kind", "regex_must_match"}, {"pattern", "x+"}}).to_json().dump() ==
          R"({"kind":"regex_must_match","pattern":"x+"})");
    for (const auto& bad : {nlohmann::json{{"kind", "max_words"}}, nlohmann::json{{"kind", "max_words"}, {"n", 0}},
                            nlohmann::json{{"kind", "max_words"}, {"n", 2.5}}, nlohmann::json{{"kind", "rhyme"}},
                            nlohmann::json{{"kind", "regex_must_match"}, {"pattern", "("}},
                            nlohmann::json{{"kind", "regex_must_match"}}, nlohmann::json::array()}) {
        CHECK(error_of([&] { ConstraintSpec::from_json(bad); }) == ErrorKind::InvalidConstraint);
    }
}

TEST_CASE("instruction-following rate") {
    std::vector<ConstrainedResponse> rs;
    for (int i = 0; i < 10; ++i) {
        rs.push_back({i < 7 ? "short answer" : "this answer is far too long", {ConstraintSpec::max_words(3)}});
    }
    CHECK(if_rate(rs) == doctest::Approx(70.0));
    // All constraints must hold.
    std::vector<ConstrainedResponse> both{
        {"{\"a\": 1}", {ConstraintSpec::max_words(5), ConstraintSpec::valid_json()}},
        {"a b", {ConstraintSpec::max_words(5), ConstraintSpec::valid_json()}},
    };
    CHECK(if_rate(both) == doctest::Approx(50.0));
    CHECK(error_of([] { if_rate({}); }) == ErrorKind::EmptyInput);
    CHECK(error_of([] { if_rate({{"x", {}}}); }) == ErrorKind::InvalidConstraint);
}

TEST_CASE("relative scores") {
    std::map<std::string, double> model{{"a", 11.0}, {"b", 8.0}, {"c", 14.0}};
    std::map<std::string, double> base{{"a", 10.0}, {"b", 10.0}, {"c", 10.0}};
    auto t = relative_scores(model, base);
    CHECK(t.relative.at("a") == doctest::Approx(1.0));
    CHECK(t.relative.at("b") == doctest::Approx(-2.0));
    CHECK(t.relative.at("c") == doctest::Approx(4.0));
    CHECK(t.win_count == 2);
    CHECK(t.average == doctest::Approx(1.0));
    // Equal scores are not wins.
    CHECK(relative_scores({{"a", 5.0}}, {{"a", 5.0}}).win_count == 0);
    CHECK(error_of([&] { relative_scores({{"a", 1.0}}, base); }) == ErrorKind::DomainMismatch);
    CHECK(error_of([&] { relative_scores(model, {{"a", 1.0}}); }) == ErrorKind::DomainMismatch);
    CHECK(error_of([] { relative_scores({}, {}); }) == ErrorKind::DomainMismatch);
}

TEST_CASE("forty-eight task fixture matches the frozen accuracy") {
    auto items = desta::testing::forty_eight_task_fixture();
    auto r = accuracy_report(items);
    CHECK(r.items == 192);
    CHECK(r.correct == 109);
    CHECK(r.per_task.size() == 48);
    CHECK(r.micro == doctest::Approx(56.770833333333336).epsilon(1e-12));
    CHECK(r.macro == doctest::Approx(58.05555555555555).epsilon(1e-12));
    CHECK(r.per_category.size() == 5);
    CHECK(r.per_category.at("CON") == doctest::Approx(50.0));
    CHECK(r.per_category.at("SEM") == doctest::Approx(100.0));
    CHECK(r.per_category.at("PAR") == doctest::Approx(40.0));
    CHECK(r.per_category.at("DEG") == doctest::Approx(51.851851851851855).epsilon(1e-12));
    CHECK(r.per_category.at("SPK") == doctest::Approx(46.666666666666664).epsilon(1e-12));
}

TEST_CASE("accuracy invariants") {
    std::vector<EvalItem> items{item("t1", "X", "yes", "yes"), item("t1", "X", "no", "yes"),
                                item("t2", "Y", "a", "a")};
    auto r = accuracy_report(items);
    CHECK(r.micro == doctest::Approx(200.0 / 3.0));
    CHECK(r.macro == doctest::Approx(75.0));
    // Macro weights tasks equally, so it moves when a big task changes.
    for (int i = 0; i < 8; ++i) {
        items.push_back(item("t1", "X", "no", "yes"));
    }
    auto big = accuracy_report(items);
    CHECK(big.macro == doctest::Approx(55.0));
    CHECK(big.micro == doctest::Approx(200.0 / 11.0));
    // Permuting items changes nothing.
    std::reverse(items.begin(), items.end());
    auto rev = accuracy_report(items);
    CHECK(rev.micro == big.micro);
    CHECK(rev.macro == big.macro);
    CHECK(rev.per_category == big.per_category);
    // Items without a category count toward the totals only.
    auto blank = accuracy_report({item("t", "", "a", "a")});
    CHECK(blank.per_category.empty());
    CHECK(blank.micro == 100.0);
    CHECK(error_of([] { accuracy_report({}); }) == ErrorKind::EmptyInput);
}

TEST_CASE("answer normalization and choice extraction") {
    CHECK(normalize_answer("  Dog Barking\n") == "dog barking");
    CHECK(is_correct(item("t", "c", " YES ", "yes"), {}));
    CHECK_FALSE(is_correct(item("t", "c", "yes.", "yes"), {}));
    CHECK(extract_choice("(b)") == 'B');
    CHECK(extract_choice("Answer: C.") == 'C');
    CHECK(extract_choice("A dog") == 'A');
    CHECK(extract_choice("bad") == std::nullopt);
    CHECK(extract_choice("E") == std::nullopt);
    MatchOptions choice{true};
    CHECK(is_correct(item("t", "c", "The answer is (d)", "D"), choice));
    CHECK_FALSE(is_correct(item("t", "c", "The answer is (d)", "D"), {}));
    CHECK_FALSE(is_correct(item("t", "c", "(a)", "B"), choice));
    // Falls back to normalized text when no letter is present.
    CHECK(is_correct(item("t", "c", "Yes ", "yes"), choice));
}

TEST_CASE("response files") {
    auto items = parse_responses(
        "{\"task_id\":\"t1\",\"category\":\"SEM\",\"prediction\":\"Yes\",\"label\":\"yes\"}\n"
        "\n"
        "{\"task_id\":\"t2\",\"category\":\"CON\",\"prediction\":\"{}\",\"label\":\"x\","
        "\"constraints\":[{\"kind\":\"valid_json\"}]}\n");
    REQUIRE(items.size() == 2);
    CHECK(items[0].prediction == "Yes");
    CHECK(items[1].constraints.size() == 1);
    CHECK(error_of([] { parse_responses("{\"task_id\":\"t\"}\n"); }) == ErrorKind::SchemaViolation);
    CHECK(error_of([] { parse_responses("[1]\n"); }) == ErrorKind::SchemaViolation);
    CHECK(error_of([] {
              parse_responses("{\"task_id\":\"t\",\"category\":\"c\",\"prediction\":\"p\",\"label\":\"l\","
                              "\"constraints\":{}}\n");
          }) == ErrorKind::InvalidConstraint);
    try {
        parse_responses("{\"task_id\":\"t\",\"category\":\"c\",\"prediction\":\"p\",\"label\":\"l\"}\nnot json\n");
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::SchemaViolation);
        CHECK(e.line() == 2);
    }
    CHECK(error_of([] { load_responses("/nonexistent/responses.jsonl"); }) == ErrorKind::Io);
}

TEST_CASE("baseline files") {
    TempDir dir;
    write_file(dir / "flat.json", R"({"SEM": 50.0, "CON": 40})");
    auto flat = load_baseline(dir / "flat.json");
    CHECK_FALSE(flat.model.has_value());
    CHECK(flat.baseline.at("CON") == 40.0);
    write_file(dir / "pair.json", R"({"model": {"a": 3}, "baseline": {"a": 1}})");
    auto pair = load_baseline(dir / "pair.json");
    REQUIRE(pair.model.has_value());
    CHECK(pair.model->at("a") == 3.0);
    write_file(dir / "bad.json", R"({"a": "x"})");
    CHECK(error_of([&] { load_baseline(dir / "bad.json"); }) == ErrorKind::SchemaViolation);
    write_file(dir / "broken.json", "{");
    CHECK(error_of([&] { load_baseline(dir / "broken.json"); }) == ErrorKind::SchemaViolation);
}

TEST_CASE("full evaluation report") {
    std::vector<EvalItem> items{item("t1", "SEM", "yes", "yes"), item("t2", "CON", "no", "yes")};
    items[0].constraints = {ConstraintSpec::max_words(1)};
    items[1].constraints = {ConstraintSpec::max_words(1), ConstraintSpec::valid_json()};
    BaselineFile base;
    base.baseline = {{"SEM", 90.0}, {"CON", 10.0}};
    auto report = evaluate(items, {}, 50.0, base);
    CHECK(report.ifrate == doctest::Approx(50.0));
    CHECK(report.constrained_responses == 2);
    CHECK(*report.delta == doctest::Approx(0.0));
    REQUIRE(report.relative.has_value());
    CHECK(report.relative->relative.at("SEM") == doctest::Approx(10.0));
    CHECK(report.relative->relative.at("CON") == doctest::Approx(-10.0));
    auto j = to_json(report);
    CHECK(j["normalization"] == "trim+casefold");
    CHECK(j["delta_display"] == "0.00");
    CHECK(j["accuracy"]["micro"] == 50.0);
    CHECK(j["relative"]["win_count"] == 1);

    auto plain = evaluate({item("t", "c", "a", "a")}, {}, std::nullopt, std::nullopt);
    auto pj = to_json(plain);
    CHECK_FALSE(pj.contains("ifrate"));
    CHECK_FALSE(pj.contains("relative"));
    CHECK(error_of([] { evaluate({item("t", "c", "a", "a")}, {}, 80.0, std::nullopt); }) ==
          ErrorKind::InvalidConstraint);
}
