// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#include "fixtures.hpp"

#include <json.hpp>

#include <map>

#include "desta/mock_backend.hpp"

#include "support.hpp"

namespace desta::testing {

llm::HttpResponse ScriptedTransport::post(const llm::HttpRequest& request) {
    std::size_t n = calls_++;
    {
        std::lock_guard lock(mutex_);
        seen_.push_back(request);
    }
    const Step& step = script_[std::min(n, script_.size() - 1)];
    if (step.raise) {
        throw Error(*step.raise, "scripted failure");
    }
    return {step.status, step.body};
}

std::vector<llm::HttpRequest> ScriptedTransport::requests() const {
    std::lock_guard lock(mutex_);
    return seen_;
}

llm::Sleeper SleepLog::sleeper() {
    return [this](std::chrono::milliseconds d) { delays.push_back(d); };
}

std::string chat_reply(const std::string& content, const std::string& finish, int completion_tokens) {
    nlohmann::json j = {
        {"model", "scripted"},
        {"choices", {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", content}}}, {"finish_reason", finish}}}},
        {"usage", {{"prompt_tokens", 5}, {"completion_tokens", completion_tokens}, {"total_tokens", 5 + completion_tokens}}},
    };
    return j.dump();
}

RetryOutcome run_retry_script(std::vector<ScriptedTransport::Step> script, int max_attempts) {
    auto transport = std::make_shared<ScriptedTransport>(std::move(script));
    SleepLog log;
    llm::RemoteConfig cfg;
    cfg.model = "scripted";
    cfg.max_attempts = max_attempts;
    cfg.backoff_base = std::chrono::milliseconds(100);
    llm::RemoteBackend backend(cfg, transport, log.sleeper());
    RetryOutcome out;
    try {
        backend.generate("hello", {});
    } catch (const Error& e) {
        out.error = e.kind();
    }
    out.attempts = transport->calls();
    out.delays = log.delays;
    return out;
}

std::vector<eval::EvalItem> forty_eight_task_fixture() {
    const char* categories[] = {"CON", "SEM", "PAR", "DEG", "SPK"};
    std::vector<eval::EvalItem> items;
    for (int t = 0; t < 48; ++t) {
        const int size = 2 + (7 * t) % 5;
        const int right = (3 * t + 1) % (size + 1);
        for (int i = 0; i < size; ++i) {
            eval::EvalItem item;
            item.task_id = "task-" + std::to_string(t);
            item.category = categories[t % 5];
            item.label = i % 2 ? "Yes" : "dog barking";
            if (i < right) {
                item.prediction = i % 3 == 0 ? "  " + item.label + "\n" : (i % 3 == 1 ? "YES" : item.label);
                if (i % 3 == 1 && item.label != "Yes") {
                    item.prediction = "DOG BARKING";
                }
            } else {
                item.prediction = i % 2 ? "No" : "cat";
            }
            items.push_back(std::move(item));
        }
    }
    return items;
}

std::vector<forge::InitialPair> synthetic_pairs(std::size_t speech, std::size_t sound, std::size_t music) {
    using description::Bare;
    using description::KeyValue;
    using description::Segment;
    using description::Timestamp;
    const char* words[] = {"hello there", "good morning", "it is raining", "call me later", "see you soon"};
    const char* events[] = {"A dog barking", "Rain on a roof", "Glass breaking", "Crowd cheering"};
    const char* genres[] = {"jazz", "rock", "ambient", "folk"};
    std::vector<forge::InitialPair> pairs;
    auto add = [&](Domain domain, std::size_t count) {
        for (std::size_t i = 0; i < count; ++i) {
            forge::InitialPair p;
            p.domain = domain;
            p.id = std::string(to_string(domain)) + "-" + std::to_string(i);
            p.audio_path = "audio/" + p.id + ".wav";
            auto start = Timestamp::whole(static_cast<std::int64_t>(i % 7));
            auto end = Timestamp::whole(static_cast<std::int64_t>(i % 7 + 3 + i % 5));
            if (domain == Domain::Speech) {
                p.description.segments.push_back(Segment{start, end, words[i % 5],
                                                         {KeyValue{"Gender", i % 2 ? "Male" : "Female"},
                                                          KeyValue{"Emotion", i % 3 ? "Neutral" : "Happy, excited"}}});
                if (i % 2 == 0) {
                    p.transcript = words[i % 5];
                }
            } else if (domain == Domain::Sound) {
                p.description.segments.push_back(Segment{start, end, "", {Bare{events[i % 4]}}});
            } else {
                p.description.segments.push_back(
                    Segment{start, end, "", {KeyValue{"Genre", genres[i % 4]}, KeyValue{"Tempo", std::to_string(60 + i)}}});
            }
            if (i % 4 == 3) {
                p.description.segments.push_back(Segment{end, Timestamp::whole(end.whole_seconds() + 2), "", {Bare{"silence"}}});
            }
            pairs.push_back(std::move(p));
        }
    };
    add(Domain::Speech, speech);
    add(Domain::Sound, sound);
    add(Domain::Music, music);
    return pairs;
}

std::vector<forge::Triplet> mock_triplets(std::uint64_t generator_seed, std::size_t count,
                                          const llm::DecodingConfig& cfg) {
    auto pairs = synthetic_pairs(count / 2 + 1, count / 4 + 1, count / 4 + 1);
    forge::BalanceConfig balance;
    balance.weights = {{Domain::Speech, 0.5}, {Domain::Sound, 0.25}, {Domain::Music, 0.25}};
    auto plan = forge::plan_pairs(pairs, shipped_pool(), balance, 1000 + count);
    llm::MockBackend generator(generator_seed);
    std::map<std::string, const forge::InitialPair*> by_id;
    for (const auto& p : pairs) {
        by_id[p.id] = &p;
    }
    std::vector<forge::Triplet> out;
    for (std::size_t i = 0; i < count; ++i) {
        const auto& item = plan[i];
        const auto& pair = *by_id.at(item.pair_id);
        forge::Triplet t;
        t.id = pair.id + "/" + std::to_string(i);
        t.audio_path = pair.audio_path;
        t.domain = pair.domain;
        t.description = description::serialize_description(pair.description);
        t.prompt = shipped_pool().find(item.prompt_id)->text;
        t.prompt_id = item.prompt_id;
        t.target = generator.generate(item.composed_request, cfg).text;
        t.generator = {generator.model_name(), cfg.temperature, cfg.top_p};
        t.item_index = i;
        out.push_back(std::move(t));
    }
    return out;
}

const prompt::PromptPool& shipped_pool() {
    static const prompt::PromptPool pool = prompt::load_pool(source_path("data/prompt_pool.jsonl"));
    return pool;
}

} // namespace desta::testing
