// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace desta::llm {

struct DecodingConfig {
    double temperature = 0.05;
    double top_p = 1.0;
    std::int64_t max_new_tokens = 512;
    std::optional<std::string> system_prompt;

    /// Throws Error(Config) unless temperature >= 0, 0 < top_p <= 1 and
    /// max_new_tokens > 0.
    void check() const;
};

enum class FinishReason { Stop, Length, Error };

std::string_view to_string(FinishReason reason);
FinishReason parse_finish_reason(std::string_view text);

struct GenerationResult {
    std::string text;
    std::int64_t token_count = 0;
    std::string model_name;
    FinishReason finish_reason = FinishReason::Stop;
};

struct TokenLogProb {
    std::string token_text;
    double log_prob = 0.0;
};

struct TokenScores {
    std::vector<TokenLogProb> tokens;
    double total_nll = 0.0;
};

/// Text generation plus token scoring. Implementations must tolerate
/// concurrent calls from several threads. Each backend owns its tokenization,
/// so scores are only comparable between datasets scored by the same backend.
class GenerationBackend {
public:
    virtual ~GenerationBackend() = default;

    virtual std::string model_name() const = 0;

    virtual GenerationResult generate(const std::string& request, const DecodingConfig& cfg) = 0;

    /// Log-probabilities of `target` given `context`; the returned tokens
    /// concatenate to exactly `target`.
    virtual TokenScores score_tokens(const std::string& context, const std::string& target) = 0;

    virtual bool supports_scoring() const { return true; }
};

/// Checked entry points: validate preconditions and result invariants.
GenerationResult generate(GenerationBackend& backend, const std::string& request,
                          const DecodingConfig& cfg = {});

TokenScores score_tokens(GenerationBackend& backend, const std::string& context,
                         const std::string& target);

/// Sums -log_prob over tokens.
double total_nll(const std::vector<TokenLogProb>& tokens);

} // namespace desta::llm
