// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#include "desta/mock_backend.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "desta/rng.hpp"

namespace desta::llm {

namespace {

void raise_if_hooked(const FailureHook& hook, std::string_view request) {
    if (!hook) {
        return;
    }
    if (auto kind = hook(request)) {
        throw Error(*kind, "injected failure");
    }
}

} // namespace

MockBackend::MockBackend(std::uint64_t seed, double logit_scale) : seed_(seed) {
    Rng rng(mix64(seed));
    for (int s = 0; s <= kVocab; ++s) {
        double max_logit = -1e300;
        for (int n = 0; n < kVocab; ++n) {
            logits_[s][n] = logit_scale * standard_normal(rng);
            max_logit = std::max(max_logit, logits_[s][n]);
        }
        double z = 0.0;
        for (int n = 0; n < kVocab; ++n) {
            z += std::exp(logits_[s][n] - max_logit);
        }
        double log_z = max_logit + std::log(z);
        for (int n = 0; n < kVocab; ++n) {
            log_probs_[s][n] = logits_[s][n] - log_z;
        }
    }
}

std::string MockBackend::model_name() const {
    return "mock-bigram-" + std::to_string(seed_);
}

int MockBackend::symbol_of(unsigned char byte) {
    if (byte >= 'a' && byte <= 'z') return byte - 'a';
    if (byte >= 'A' && byte <= 'Z') return 26 + (byte - 'A');
    if (byte >= '0' && byte <= '9') return 52 + (byte - '0');
    if (byte == ' ') return 62;
    return kStopSymbol;
}

char MockBackend::render(int symbol) {
    if (symbol < 26) return static_cast<char>('a' + symbol);
    if (symbol < 52) return static_cast<char>('A' + symbol - 26);
    if (symbol < 62) return static_cast<char>('0' + symbol - 52);
    if (symbol == 62) return ' ';
    return '.';
}

int MockBackend::state_after(std::string_view text) {
    return text.empty() ? kBeginState : symbol_of(static_cast<unsigned char>(text.back()));
}

GenerationResult MockBackend::generate(const std::string& request, const DecodingConfig& cfg) {
    raise_if_hooked(failure_hook_, request);

    Rng rng(hash_bytes(request, seed_));
    GenerationResult result;
    result.model_name = model_name();
    result.finish_reason = FinishReason::Length;

    int state = state_after(request);
    std::vector<double> weights(kVocab);
    std::vector<int> order(kVocab);
    for (std::int64_t step = 0; step < cfg.max_new_tokens; ++step) {
        const auto& lp = log_probs_[state];
        int next = 0;
        if (cfg.temperature <= 0.0) {
            next = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
        } else {
            // Tempered distribution, then nucleus truncation.
            double max_lp = *std::max_element(lp.begin(), lp.end());
            double z = 0.0;
            for (int n = 0; n < kVocab; ++n) {
                weights[n] = std::exp((lp[n] - max_lp) / cfg.temperature);
                z += weights[n];
            }
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(),
                             [&](int a, int b) { return weights[a] > weights[b]; });
            double kept = 0.0;
            std::size_t cutoff = 0;
            while (cutoff < order.size()) {
                kept += weights[order[cutoff]] / z;
                ++cutoff;
                if (kept >= cfg.top_p) {
                    break;
                }
            }
            double mass = 0.0;
            for (std::size_t i = 0; i < cutoff; ++i) {
                mass += weights[order[i]];
            }
            double u = uniform_real(rng) * mass;
            next = order[cutoff - 1];
            for (std::size_t i = 0; i < cutoff; ++i) {
                u -= weights[order[i]];
                if (u < 0.0) {
                    next = order[i];
                    break;
                }
            }
        }
        result.text.push_back(render(next));
        ++result.token_count;
        state = next;
        if (next == kStopSymbol) {
            result.finish_reason = FinishReason::Stop;
            break;
        }
    }
    return result;
}

TokenScores MockBackend::score_tokens(const std::string& context, const std::string& target) {
    raise_if_hooked(failure_hook_, context);

    TokenScores scores;
    scores.tokens.reserve(target.size());
    int state = state_after(context);
    for (char c : target) {
        int sym = symbol_of(static_cast<unsigned char>(c));
        scores.tokens.push_back({std::string(1, c), log_probs_[state][sym]});
        state = sym;
    }
    scores.total_nll = total_nll(scores.tokens);
    return scores;
}

UniformBackend::UniformBackend(int vocab) : vocab_(vocab) {
    if (vocab < 1 || vocab > MockBackend::kVocab) {
        throw Error(ErrorKind::Config, "uniform vocabulary must be in [1, 64]");
    }
}

std::string UniformBackend::model_name() const {
    return "uniform-" + std::to_string(vocab_);
}

GenerationResult UniformBackend::generate(const std::string& request, const DecodingConfig& cfg) {
    Rng rng(hash_bytes(request, static_cast<std::uint64_t>(vocab_)));
    GenerationResult result;
    result.model_name = model_name();
    result.finish_reason = FinishReason::Length;
    for (std::int64_t i = 0; i < cfg.max_new_tokens; ++i) {
        result.text.push_back(MockBackend::render(static_cast<int>(uniform_index(rng, vocab_))));
    }
    result.token_count = cfg.max_new_tokens;
    return result;
}

TokenScores UniformBackend::score_tokens(const std::string&, const std::string& target) {
    TokenScores scores;
    const double lp = -std::log(static_cast<double>(vocab_));
    for (char c : target) {
        scores.tokens.push_back({std::string(1, c), lp});
    }
    scores.total_nll = total_nll(scores.tokens);
    return scores;
}

} // namespace desta::llm
