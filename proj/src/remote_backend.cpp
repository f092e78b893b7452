// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#include "desta/remote_backend.hpp"

#include <fstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "desta/error.hpp"

namespace desta::llm {

using nlohmann::json;

// ---------------------------------------------------------------------------
// HttplibTransport

HttplibTransport::HttplibTransport(std::string base_url, std::optional<std::string> api_token,
                                   std::chrono::seconds timeout)
    : api_token_(std::move(api_token)), timeout_(timeout) {
    auto scheme = base_url.find("://");
    auto path_start = base_url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    if (path_start == std::string::npos) {
        origin_ = base_url;
    } else {
        origin_ = base_url.substr(0, path_start);
        path_prefix_ = base_url.substr(path_start);
        while (!path_prefix_.empty() && path_prefix_.back() == '/') {
            path_prefix_.pop_back();
        }
    }
}

HttpResponse HttplibTransport::post(const HttpRequest& request) {
    httplib::Client client(origin_);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);
    httplib::Headers headers;
    if (api_token_ && !api_token_->empty()) {
        headers.emplace("Authorization", "Bearer " + *api_token_);
    }
    auto res = client.Post(path_prefix_ + request.path, headers, request.body, "application/json");
    if (!res) {
        throw Error(ErrorKind::Transport, origin_ + ": " + httplib::to_string(res.error()));
    }
    return HttpResponse{res->status, res->body};
}

// ---------------------------------------------------------------------------
// Fixtures

struct ReplayTransport::Exchange {
    std::string path;
    json request;
    int status = 0;
    std::string response;
};

ReplayTransport::ReplayTransport(const std::filesystem::path& fixture) {
    std::ifstream in(fixture);
    if (!in) {
        throw Error(ErrorKind::Io, "cannot open fixture " + fixture.string());
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            auto obj = json::parse(line);
            auto ex = std::make_shared<Exchange>();
            ex->path = obj.at("path").get<std::string>();
            ex->request = obj.at("request");
            ex->status = obj.at("status").get<int>();
            const auto& resp = obj.at("response");
            ex->response = resp.is_string() ? resp.get<std::string>() : resp.dump();
            exchanges_.push_back(std::move(ex));
        } catch (const json::exception& e) {
            throw Error(ErrorKind::SchemaViolation, e.what(), line_no);
        }
    }
}

HttpResponse ReplayTransport::post(const HttpRequest& request) {
    json body;
    try {
        body = json::parse(request.body);
    } catch (const json::exception&) {
        throw Error(ErrorKind::FixtureMiss, "request body is not JSON");
    }
    for (const auto& ex : exchanges_) {
        if (ex->path == request.path && ex->request == body) {
            return HttpResponse{ex->status, ex->response};
        }
    }
    throw Error(ErrorKind::FixtureMiss, "no recorded exchange for " + request.path);
}

RecordingTransport::RecordingTransport(std::shared_ptr<HttpTransport> inner,
                                       std::filesystem::path fixture)
    : inner_(std::move(inner)), fixture_(std::move(fixture)) {}

HttpResponse RecordingTransport::post(const HttpRequest& request) {
    HttpResponse resp = inner_->post(request);
    json entry;
    entry["path"] = request.path;
    entry["request"] = json::parse(request.body);
    entry["status"] = resp.status;
    try {
        entry["response"] = json::parse(resp.body);
    } catch (const json::exception&) {
        entry["response"] = resp.body;
    }
    std::lock_guard lock(mutex_);
    std::ofstream out(fixture_, std::ios::app);
    out << entry.dump() << '\n';
    return resp;
}

// ---------------------------------------------------------------------------
// RemoteBackend

namespace {

std::ptrdiff_t clamp_in_flight(std::size_t n) {
    return static_cast<std::ptrdiff_t>(n == 0 ? 1 : n);
}

[[noreturn]] void malformed(const std::string& what) {
    throw Error(ErrorKind::RemoteRefusal, "malformed response: " + what);
}

json parse_body(const std::string& body) {
    try {
        return json::parse(body);
    } catch (const json::exception& e) {
        malformed(e.what());
    }
}

} // namespace

RemoteBackend::RemoteBackend(RemoteConfig config, std::shared_ptr<HttpTransport> transport,
                             Sleeper sleeper)
    : config_(std::move(config)),
      transport_(std::move(transport)),
      sleeper_(std::move(sleeper)),
      in_flight_(clamp_in_flight(config_.max_in_flight)) {
    if (!sleeper_) {
        sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
    }
    if (config_.max_attempts < 1) {
        config_.max_attempts = 1;
    }
}

HttpResponse RemoteBackend::exchange(const HttpRequest& request) {
    if (config_.token_budget && tokens_used_.load() >= *config_.token_budget) {
        throw Error(ErrorKind::BudgetExceeded,
                    std::to_string(tokens_used_.load()) + " tokens used of " +
                        std::to_string(*config_.token_budget));
    }
    std::optional<Error> last;
    for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
        ++attempts_;
        HttpResponse resp;
        bool got = false;
        in_flight_.acquire();
        try {
            resp = transport_->post(request);
            got = true;
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::Transport) {
                in_flight_.release();
                throw;
            }
            last = e;
        }
        in_flight_.release();

        if (got) {
            if (resp.status == 200) {
                return resp;
            }
            std::string snippet = resp.body.substr(0, 200);
            if (resp.status == 429 || resp.status >= 500) {
                last = Error(ErrorKind::Transport, "HTTP " + std::to_string(resp.status) + ": " + snippet);
            } else {
                throw Error(ErrorKind::RemoteRefusal, "HTTP " + std::to_string(resp.status) + ": " + snippet);
            }
        }
        if (attempt < config_.max_attempts) {
            sleeper_(config_.backoff_base * (std::int64_t{1} << (attempt - 1)));
        }
    }
    throw *last;
}

void RemoteBackend::charge(std::int64_t tokens) {
    tokens_used_ += tokens;
}

GenerationResult RemoteBackend::generate(const std::string& request, const DecodingConfig& cfg) {
    json body;
    body["model"] = config_.model;
    json messages = json::array();
    if (cfg.system_prompt) {
        messages.push_back({{"role", "system"}, {"content", *cfg.system_prompt}});
    }
    messages.push_back({{"role", "user"}, {"content", request}});
    body["messages"] = std::move(messages);
    body["temperature"] = cfg.temperature;
    body["top_p"] = cfg.top_p;
    body["max_tokens"] = cfg.max_new_tokens;

    HttpResponse resp = exchange({"/chat/completions", body.dump()});
    json reply = parse_body(resp.body);

    GenerationResult result;
    try {
        const auto& choice = reply.at("choices").at(0);
        result.text = choice.at("message").at("content").get<std::string>();
        result.finish_reason = choice.contains("finish_reason") && choice["finish_reason"].is_string()
                                   ? parse_finish_reason(choice["finish_reason"].get<std::string>())
                                   : FinishReason::Error;
        std::int64_t total = 0;
        if (reply.contains("usage") && reply["usage"].is_object()) {
            const auto& usage = reply["usage"];
            result.token_count = usage.value("completion_tokens", std::int64_t{0});
            total = usage.value("total_tokens", result.token_count);
        }
        charge(total);
        result.model_name = reply.value("model", config_.model);
    } catch (const json::exception& e) {
        malformed(e.what());
    }
    return result;
}

TokenScores RemoteBackend::score_tokens(const std::string& context, const std::string& target) {
    const std::string prefix = context + config_.score_separator;
    json body;
    body["model"] = config_.model;
    body["prompt"] = prefix + target;
    body["max_tokens"] = 1;
    body["temperature"] = 0.0;
    body["echo"] = true;
    body["logprobs"] = 1;

    HttpResponse resp = exchange({"/completions", body.dump()});
    json reply = parse_body(resp.body);

    TokenScores scores;
    try {
        const auto& lp = reply.at("choices").at(0).at("logprobs");
        const auto& tokens = lp.at("tokens");
        const auto& logprobs = lp.at("token_logprobs");
        const auto& offsets = lp.at("text_offset");
        if (tokens.size() != logprobs.size() || tokens.size() != offsets.size()) {
            malformed("logprob arrays differ in length");
        }
        const std::size_t begin = prefix.size();
        const std::size_t end = begin + target.size();
        std::string covered;
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            auto offset = offsets[i].get<std::size_t>();
            if (offset < begin || offset >= end) {
                continue;
            }
            if (logprobs[i].is_null()) {
                malformed("null log-probability inside target");
            }
            scores.tokens.push_back({tokens[i].get<std::string>(), logprobs[i].get<double>()});
            covered += scores.tokens.back().token_text;
        }
        if (covered != target) {
            throw Error(ErrorKind::RemoteRefusal, "scored tokens do not align with the target text");
        }
        if (reply.contains("usage") && reply["usage"].is_object()) {
            charge(reply["usage"].value("total_tokens", std::int64_t{0}));
        }
    } catch (const json::exception& e) {
        malformed(e.what());
    }
    scores.total_nll = total_nll(scores.tokens);
    return scores;
}

} // namespace desta::llm
