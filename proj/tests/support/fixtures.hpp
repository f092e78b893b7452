// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#pragma once

#include <atomic>
#include <chrono>
#include <mutex>
#include <optional>
#include <vector>

#include "desta/error.hpp"
#include "desta/eval.hpp"
#include "desta/forge.hpp"
#include "desta/remote_backend.hpp"

namespace desta::testing {

/// Transport that plays a fixed script of outcomes, repeating the last one.
class ScriptedTransport final : public llm::HttpTransport {
public:
    struct Step {
        std::optional<ErrorKind> raise; // thrown instead of answering
        int status = 200;
        std::string body;
    };

    explicit ScriptedTransport(std::vector<Step> script) : script_(std::move(script)) {}

    llm::HttpResponse post(const llm::HttpRequest& request) override;

    std::size_t calls() const { return calls_.load(); }
    std::vector<llm::HttpRequest> requests() const;

    static Step fail(ErrorKind kind) { return Step{kind, 0, {}}; }
    static Step status(int code, std::string body = "{}") { return Step{std::nullopt, code, std::move(body)}; }

private:
    std::vector<Step> script_;
    std::atomic<std::size_t> calls_{0};
    mutable std::mutex mutex_;
    std::vector<llm::HttpRequest> seen_;
};

/// Records requested backoff delays instead of sleeping.
struct SleepLog {
    std::vector<std::chrono::milliseconds> delays;
    llm::Sleeper sleeper();
};

/// A well-formed chat-completion reply.
std::string chat_reply(const std::string& content, const std::string& finish = "stop", int completion_tokens = 3);

struct RetryOutcome {
    std::size_t attempts = 0;
    std::optional<ErrorKind> error;
    std::vector<std::chrono::milliseconds> delays;
};

/// Runs one generate() against a script with backoff base 100 ms.
RetryOutcome run_retry_script(std::vector<ScriptedTransport::Step> script, int max_attempts = 5);

/// 48 tasks over five categories with planted sizes and correct counts:
/// task t has 2 + (7t mod 5) items of which (3t + 1) mod (size + 1) are right.
std::vector<eval::EvalItem> forty_eight_task_fixture();

/// Synthetic initial pairs with varied one- or two-segment descriptions.
/// Speech pairs carry a transcript on every other record.
std::vector<forge::InitialPair> synthetic_pairs(std::size_t speech, std::size_t sound, std::size_t music);

/// `count` triplets over synthetic pairs whose targets come from
/// MockBackend(generator_seed) with the given decoding settings.
std::vector<forge::Triplet> mock_triplets(std::uint64_t generator_seed, std::size_t count,
                                          const llm::DecodingConfig& cfg = {});

/// The shipped exemplar prompt pool.
const prompt::PromptPool& shipped_pool();

} // namespace desta::testing
