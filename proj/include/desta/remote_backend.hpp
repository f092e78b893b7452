// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

#include "desta/llm_backend.hpp"

namespace desta::llm {

struct HttpRequest {
    std::string path;
    std::string body;
};

struct HttpResponse {
    int status = 0;
    std::string body;
};

/// One POST exchange. Network failures and timeouts are reported by throwing
/// Error(Transport); any HTTP status is returned as-is.
class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    virtual HttpResponse post(const HttpRequest& request) = 0;
};

/// Real network transport (cpp-httplib).
class HttplibTransport final : public HttpTransport {
public:
    /// `base_url` is scheme://host[:port]; a trailing path prefix such as
    /// "/v1" is prepended to every request path.
    HttplibTransport(std::string base_url, std::optional<std::string> api_token,
                     std::chrono::seconds timeout = std::chrono::seconds(120));

    HttpResponse post(const HttpRequest& request) override;

private:
    std::string origin_;
    std::string path_prefix_;
    std::optional<std::string> api_token_;
    std::chrono::seconds timeout_;
};

/// Replays exchanges from a fixture file: one JSON object per line with
/// fields `path`, `request` (JSON body), `status`, `response` (JSON body).
/// Requests are matched on path and structurally equal body.
class ReplayTransport final : public HttpTransport {
public:
    explicit ReplayTransport(const std::filesystem::path& fixture);

    HttpResponse post(const HttpRequest& request) override;

    std::size_t size() const { return exchanges_.size(); }

private:
    struct Exchange;
    std::vector<std::shared_ptr<Exchange>> exchanges_;
};

/// Forwards to `inner` and appends every completed exchange to `fixture` in
/// the ReplayTransport format.
class RecordingTransport final : public HttpTransport {
public:
    RecordingTransport(std::shared_ptr<HttpTransport> inner, std::filesystem::path fixture);

    HttpResponse post(const HttpRequest& request) override;

private:
    std::shared_ptr<HttpTransport> inner_;
    std::filesystem::path fixture_;
    std::mutex mutex_;
};

struct RemoteConfig {
    std::string model;
    int max_attempts = 5;
    std::chrono::milliseconds backoff_base{500};
    std::size_t max_in_flight = 8;
    std::optional<std::int64_t> token_budget;
    /// Inserted between context and target when scoring.
    std::string score_separator = "\n";
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

/// Client for the de-facto chat-completions wire format. Generation posts to
/// `/chat/completions`; scoring posts context + separator + target to
/// `/completions` with `echo` and `logprobs` and keeps the tokens whose text
/// offset falls inside the target.
///
/// Only Transport errors (network failure, timeout, HTTP 429 and 5xx) are
/// retried, with exponential backoff base * 2^(attempt-1), at most
/// `max_attempts` tries in total. Other statuses raise RemoteRefusal.
class RemoteBackend final : public GenerationBackend {
public:
    RemoteBackend(RemoteConfig config, std::shared_ptr<HttpTransport> transport,
                  Sleeper sleeper = {});

    std::string model_name() const override { return config_.model; }
    GenerationResult generate(const std::string& request, const DecodingConfig& cfg) override;
    TokenScores score_tokens(const std::string& context, const std::string& target) override;

    std::int64_t tokens_used() const { return tokens_used_.load(); }
    std::uint64_t attempts() const { return attempts_.load(); }

private:
    HttpResponse exchange(const HttpRequest& request);
    void charge(std::int64_t tokens);

    RemoteConfig config_;
    std::shared_ptr<HttpTransport> transport_;
    Sleeper sleeper_;
    std::counting_semaphore<> in_flight_;
    std::atomic<std::int64_t> tokens_used_{0};
    std::atomic<std::uint64_t> attempts_{0};
};

} // namespace desta::llm
