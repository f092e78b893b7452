// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#include "desta/probe.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "desta/error.hpp"
#include "desta/prompt_pool.hpp"

namespace desta::probe {

PplReport make_report(std::string label, std::string scorer, std::int64_t tokens, double nll) {
    PplReport r;
    r.dataset_label = std::move(label);
    r.scorer_model = std::move(scorer);
    r.token_count = tokens;
    r.total_nll = nll;
    r.ppl = tokens > 0 ? std::exp(nll / static_cast<double>(tokens)) : 1.0;
    return r;
}

PplReport merge_reports(const PplReport& a, const PplReport& b) {
    if (a.scorer_model != b.scorer_model) {
        throw Error(ErrorKind::MixedScorers, a.scorer_model + " vs " + b.scorer_model);
    }
    return make_report(a.dataset_label, a.scorer_model, a.token_count + b.token_count,
                       a.total_nll + b.total_nll);
}

PplReport corpus_perplexity(llm::GenerationBackend& scorer,
                            const std::vector<forge::Triplet>& triplets, std::string dataset_label,
                            std::size_t parallelism) {
    if (triplets.empty()) {
        throw Error(ErrorKind::EmptyDataset, dataset_label);
    }
    if (!scorer.supports_scoring()) {
        throw Error(ErrorKind::ScoringUnsupported, scorer.model_name());
    }
    std::vector<std::pair<std::int64_t, double>> parts(triplets.size());
    auto score_one = [&](std::size_t i) {
        const auto& t = triplets[i];
        auto scores = llm::score_tokens(scorer, prompt::compose_request(t.description, t.prompt), t.target);
        parts[i] = {static_cast<std::int64_t>(scores.tokens.size()), scores.total_nll};
    };

    if (parallelism <= 1) {
        for (std::size_t i = 0; i < triplets.size(); ++i) {
            score_one(i);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        {
            std::vector<std::jthread> workers;
            for (std::size_t w = 0; w < parallelism; ++w) {
                workers.emplace_back([&] {
                    for (std::size_t i = next.fetch_add(1); i < triplets.size(); i = next.fetch_add(1)) {
                        try {
                            score_one(i);
                        } catch (...) {
                            std::lock_guard lock(failure_mutex);
                            if (!failure) {
                                failure = std::current_exception();
                            }
                            next = triplets.size();
                        }
                    }
                });
            }
        }
        if (failure) {
            std::rethrow_exception(failure);
        }
    }

    std::int64_t tokens = 0;
    double nll = 0.0;
    for (const auto& [n, s] : parts) {
        tokens += n;
        nll += s;
    }
    return make_report(std::move(dataset_label), scorer.model_name(), tokens, nll);
}

ComparisonTable compare_reports(std::vector<PplReport> reports) {
    if (reports.size() < 2) {
        throw Error(ErrorKind::EmptyInput, "comparison needs at least two datasets");
    }
    ComparisonTable table;
    std::size_t best = 0;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        if (reports[i].scorer_model != reports[0].scorer_model) {
            throw Error(ErrorKind::MixedScorers,
                        reports[0].scorer_model + " vs " + reports[i].scorer_model);
        }
        if (reports[i].ppl < reports[best].ppl) {
            best = i;
        }
    }
    table.argmin_label = reports[best].dataset_label;
    table.reports = std::move(reports);
    return table;
}

ComparisonTable compare_sources(
    llm::GenerationBackend& scorer,
    const std::vector<std::pair<std::string, std::vector<forge::Triplet>>>& datasets,
    std::size_t parallelism) {
    if (datasets.size() < 2) {
        throw Error(ErrorKind::EmptyInput, "comparison needs at least two datasets");
    }
    std::vector<PplReport> reports;
    for (const auto& [label, triplets] : datasets) {
        reports.push_back(corpus_perplexity(scorer, triplets, label, parallelism));
    }
    return compare_reports(std::move(reports));
}

nlohmann::ordered_json to_json(const PplReport& r) {
    return nlohmann::ordered_json{{"dataset_label", r.dataset_label},
                                  {"scorer_model", r.scorer_model},
                                  {"token_count", r.token_count},
                                  {"total_nll", r.total_nll},
                                  {"ppl", r.ppl}};
}

nlohmann::ordered_json to_json(const ComparisonTable& table) {
    nlohmann::ordered_json reports = nlohmann::ordered_json::array();
    for (const auto& r : table.reports) {
        reports.push_back(to_json(r));
    }
    return nlohmann::ordered_json{
        {"convention", kConvention},
        {"scorer_model", table.reports.empty() ? std::string() : table.reports.front().scorer_model},
        {"reports", std::move(reports)},
        {"argmin", table.argmin_label}};
}

} // namespace desta::probe
