// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#include "desta/llm_backend.hpp"

#include "desta/error.hpp"

namespace desta::llm {

void DecodingConfig::check() const {
    if (!(temperature >= 0.0)) {
        throw Error(ErrorKind::Config, "temperature must be >= 0");
    }
    if (!(top_p > 0.0 && top_p <= 1.0)) {
        throw Error(ErrorKind::Config, "top_p must be in (0, 1]");
    }
    if (max_new_tokens <= 0) {
        throw Error(ErrorKind::Config, "max_new_tokens must be positive");
    }
}

std::string_view to_string(FinishReason reason) {
    switch (reason) {
    case FinishReason::Stop: return "stop";
    case FinishReason::Length: return "length";
    case FinishReason::Error: return "error";
    }
    return "error";
}

FinishReason parse_finish_reason(std::string_view text) {
    if (text == "stop" || text == "eos" || text == "stop_sequence") {
        return FinishReason::Stop;
    }
    if (text == "length" || text == "max_tokens") {
        return FinishReason::Length;
    }
    return FinishReason::Error;
}

GenerationResult generate(GenerationBackend& backend, const std::string& request,
                          const DecodingConfig& cfg) {
    if (request.empty()) {
        throw Error(ErrorKind::EmptyInput, "generation request is empty");
    }
    cfg.check();
    GenerationResult result = backend.generate(request, cfg);
    if (result.token_count < 0) {
        throw Error(ErrorKind::RemoteRefusal, "negative token count from " + backend.model_name());
    }
    return result;
}

TokenScores score_tokens(GenerationBackend& backend, const std::string& context,
                         const std::string& target) {
    if (target.empty()) {
        throw Error(ErrorKind::EmptyInput, "scoring target is empty");
    }
    if (!backend.supports_scoring()) {
        throw Error(ErrorKind::ScoringUnsupported, backend.model_name());
    }
    return backend.score_tokens(context, target);
}

double total_nll(const std::vector<TokenLogProb>& tokens) {
    double sum = 0.0;
    for (const auto& t : tokens) {
        sum -= t.log_prob;
    }
    return sum;
}

} // namespace desta::llm
