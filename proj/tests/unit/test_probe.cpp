// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#include <doctest.h>

#include <cmath>
#include <random>

#include "desta/error.hpp"
#include "desta/mock_backend.hpp"
#include "desta/probe.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace desta;
using namespace desta::probe;
using desta::testing::mock_triplets;
using desta::testing::oracle::MockTable;

namespace {

double oracle_ppl(std::uint64_t scorer_seed, const std::vector<forge::Triplet>& triplets) {
    MockTable table(scorer_seed);
    double nll = 0.0;
    double tokens = 0.0;
    for (const auto& t : triplets) {
        nll += table.nll(t.description + " " + t.prompt, t.target);
        tokens += static_cast<double>(t.target.size());
    }
    return std::exp(nll / tokens);
}

class NoScoring final : public llm::GenerationBackend {
public:
    std::string model_name() const override { return "no-scoring"; }
    llm::GenerationResult generate(const std::string&, const llm::DecodingConfig&) override { return {}; }
    llm::TokenScores score_tokens(const std::string&, const std::string&) override { return {}; }
    bool supports_scoring() const override { return false; }
};

ErrorKind error_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an error");
    return ErrorKind::Config;
}

} // namespace

TEST_CASE("mock perplexity matches the closed-form oracle") {
    auto triplets = mock_triplets(1, 200);
    for (std::uint64_t scorer : {1ull, 2ull}) {
        llm::MockBackend mock(scorer);
        auto report = corpus_perplexity(mock, triplets, "d");
        double expected = oracle_ppl(scorer, triplets);
        CHECK(std::abs(report.ppl - expected) <= 1e-9 * expected);
        CHECK(report.scorer_model == mock.model_name());
        CHECK(report.ppl >= 1.0);
        CHECK(std::abs(report.ppl - std::exp(report.total_nll / static_cast<double>(report.token_count))) < 1e-9);
    }
}

TEST_CASE("analytic scorers") {
    auto triplets = mock_triplets(4, 30);
    llm::UniformBackend sixteen(16);
    CHECK(corpus_perplexity(sixteen, triplets).ppl == doctest::Approx(16.0).epsilon(1e-12));
    llm::UniformBackend one(1);
    CHECK(corpus_perplexity(one, triplets).ppl == 1.0);
}

TEST_CASE("self-generated targets have lower perplexity than cross-seed ones") {
    auto self_data = mock_triplets(1, 200);
    auto cross_data = mock_triplets(2, 200);
    llm::MockBackend scorer(1);
    auto table = compare_sources(scorer, {{"cross", cross_data}, {"self", self_data}});
    REQUIRE(table.reports.size() == 2);
    CHECK(table.reports[1].ppl < table.reports[0].ppl);
    CHECK(table.argmin_label == "self");
    CHECK(oracle_ppl(1, self_data) < oracle_ppl(1, cross_data));
}

TEST_CASE("ties go to the first label") {
    auto data = mock_triplets(3, 20);
    llm::MockBackend scorer(3);
    auto table = compare_sources(scorer, {{"a", data}, {"b", data}});
    CHECK(table.reports[0].ppl == table.reports[1].ppl);
    CHECK(table.argmin_label == "a");
}

TEST_CASE("order, split and parallelism invariance") {
    auto triplets = mock_triplets(5, 120);
    llm::MockBackend scorer(6);
    auto whole = corpus_perplexity(scorer, triplets, "all");

    auto shuffled = triplets;
    std::mt19937_64 gen(1);
    std::shuffle(shuffled.begin(), shuffled.end(), gen);
    CHECK(std::abs(corpus_perplexity(scorer, shuffled).ppl - whole.ppl) <= 1e-12 * whole.ppl);

    auto parallel = corpus_perplexity(scorer, triplets, "all", 8);
    CHECK(parallel.total_nll == whole.total_nll);
    CHECK(parallel.ppl == whole.ppl);

    std::vector<forge::Triplet> a(triplets.begin(), triplets.begin() + 37), b(triplets.begin() + 37, triplets.end());
    auto merged = merge_reports(corpus_perplexity(scorer, a, "all"), corpus_perplexity(scorer, b, "all"));
    CHECK(merged.token_count == whole.token_count);
    CHECK(std::abs(merged.ppl - whole.ppl) <= 1e-12 * whole.ppl);
}

TEST_CASE("corrupting targets never lowers perplexity") {
    auto triplets = mock_triplets(8, 200);
    llm::MockBackend scorer(8);
    const std::string alphabet = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 .";
    std::mt19937_64 gen(99);
    // Nested corruption sets: position ranks decide membership.
    std::vector<std::vector<double>> rank;
    std::vector<std::string> noise;
    for (const auto& t : triplets) {
        std::vector<double> r;
        std::string n;
        for (std::size_t i = 0; i < t.target.size(); ++i) {
            r.push_back(static_cast<double>(gen() >> 11) * 0x1.0p-53);
            n.push_back(alphabet[gen() % alphabet.size()]);
        }
        rank.push_back(std::move(r));
        noise.push_back(std::move(n));
    }
    double previous = corpus_perplexity(scorer, triplets).ppl;
    for (double k : {0.10, 0.50, 1.00}) {
        auto corrupted = triplets;
        for (std::size_t j = 0; j < corrupted.size(); ++j) {
            for (std::size_t i = 0; i < corrupted[j].target.size(); ++i) {
                if (rank[j][i] < k) {
                    corrupted[j].target[i] = noise[j][i];
                }
            }
        }
        double ppl = corpus_perplexity(scorer, corrupted).ppl;
        CHECK(ppl >= previous);
        previous = ppl;
    }
}

TEST_CASE("probe errors") {
    llm::MockBackend a(1), b(2);
    CHECK(error_of([&] { corpus_perplexity(a, {}); }) == ErrorKind::EmptyDataset);
    NoScoring none;
    CHECK(error_of([&] { corpus_perplexity(none, mock_triplets(1, 2)); }) == ErrorKind::ScoringUnsupported);
    auto ra = corpus_perplexity(a, mock_triplets(1, 5), "x");
    auto rb = corpus_perplexity(b, mock_triplets(1, 5), "y");
    CHECK(error_of([&] { compare_reports({ra, rb}); }) == ErrorKind::MixedScorers);
    CHECK(error_of([&] { merge_reports(ra, rb); }) == ErrorKind::MixedScorers);
    CHECK(error_of([&] { compare_reports({ra}); }) == ErrorKind::EmptyInput);
}

TEST_CASE("report fields") {
    auto r = make_report("self", "mock-bigram-1", 10, 5.0);
    auto j = to_json(r);
    CHECK(j["dataset_label"] == "self");
    CHECK(j["scorer_model"] == "mock-bigram-1");
    CHECK(j["token_count"] == 10);
    CHECK(j["total_nll"] == 5.0);
    CHECK(j["ppl"] == doctest::Approx(std::exp(0.5)));
    auto table = compare_reports({r, make_report("cross", "mock-bigram-1", 10, 9.0)});
    auto tj = to_json(table);
    CHECK(tj["argmin"] == "self");
    CHECK(tj.dump().find(kConvention) != std::string::npos);
}
