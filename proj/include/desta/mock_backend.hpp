// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

#include "desta/error.hpp"
#include "desta/llm_backend.hpp"

namespace desta::llm {

/// Returns an error kind to raise for a request, or nullopt to proceed.
using FailureHook = std::function<std::optional<ErrorKind>(std::string_view request)>;

/// Seeded bigram language model over a fixed 64-symbol alphabet:
/// a-z, A-Z, 0-9, space, and one catch-all symbol rendered as '.'.
/// Every byte is one token. The next-symbol distribution depends only on the
/// previous symbol (or a begin state when the context is empty), with logits
/// drawn once from a seeded Gaussian. Generation stops after emitting '.'.
class MockBackend final : public GenerationBackend {
public:
    static constexpr int kVocab = 64;
    static constexpr int kBeginState = kVocab;
    static constexpr int kStopSymbol = 63;

    explicit MockBackend(std::uint64_t seed, double logit_scale = 3.0);

    std::string model_name() const override;
    GenerationResult generate(const std::string& request, const DecodingConfig& cfg) override;
    TokenScores score_tokens(const std::string& context, const std::string& target) override;

    void set_failure_hook(FailureHook hook) { failure_hook_ = std::move(hook); }

    std::uint64_t seed() const { return seed_; }

    /// Raw logit for `next` after `state` (a symbol id or kBeginState).
    double logit(int state, int next) const { return logits_[state][next]; }

    /// Conditional log-probability log p(next | state).
    double log_prob(int state, int next) const { return log_probs_[state][next]; }

    static int symbol_of(unsigned char byte);
    static char render(int symbol);

    /// Decoder state after reading `text` from the begin state.
    static int state_after(std::string_view text);

private:
    std::uint64_t seed_;
    std::array<std::array<double, kVocab>, kVocab + 1> logits_{};
    std::array<std::array<double, kVocab>, kVocab + 1> log_probs_{};
    FailureHook failure_hook_;
};

/// Scores every byte as -ln(vocab). With vocab = 1 every target token gets
/// probability one.
class UniformBackend final : public GenerationBackend {
public:
    explicit UniformBackend(int vocab);

    std::string model_name() const override;
    GenerationResult generate(const std::string& request, const DecodingConfig& cfg) override;
    TokenScores score_tokens(const std::string& context, const std::string& target) override;

private:
    int vocab_;
};

} // namespace desta::llm
