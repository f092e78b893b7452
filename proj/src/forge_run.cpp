// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>
#include <unordered_map>
#include <variant>

#include "desta/error.hpp"
#include "desta/forge.hpp"
#include "desta/rng.hpp"

namespace desta::forge {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

constexpr const char* kDeadLetterFile = "deadletter.jsonl";
constexpr const char* kManifestFile = "manifest.json";
constexpr const char* kLockFile = ".forge.lock";

class OutputLock {
public:
    explicit OutputLock(const fs::path& dir) : path_(dir / kLockFile) {
        int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd < 0) {
            throw Error(ErrorKind::OutputLocked,
                        path_.string() + " exists; another forge is running or a previous one crashed");
        }
        std::string pid = std::to_string(::getpid()) + "\n";
        bool wrote = ::write(fd, pid.data(), pid.size()) == static_cast<ssize_t>(pid.size());
        ::close(fd);
        if (!wrote) {
            fs::remove(path_);
            throw Error(ErrorKind::Io, "cannot write " + path_.string());
        }
    }
    ~OutputLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    OutputLock(const OutputLock&) = delete;
    OutputLock& operator=(const OutputLock&) = delete;

private:
    fs::path path_;
};

struct DeadLetter {
    std::uint64_t item_index = 0;
    std::string pair_id;
    std::string prompt_id;
    std::string error_kind;
    std::string message;
};

using Outcome = std::variant<Triplet, DeadLetter>;

std::string deadletter_to_json(const DeadLetter& d, std::uint64_t plan_seed) {
    ojson obj;
    obj["item_index"] = d.item_index;
    obj["pair_id"] = d.pair_id;
    obj["prompt_id"] = d.prompt_id;
    obj["plan_seed"] = plan_seed;
    obj["error_kind"] = d.error_kind;
    obj["message"] = d.message;
    return obj.dump();
}

struct RecordKey {
    std::uint64_t item_index = 0;
    std::uint64_t plan_seed = 0;
    std::string pair_id;
};

// Drops a torn last line (no trailing newline) left by an interrupted writer.
void repair_tail(const fs::path& file) {
    std::ifstream in(file, std::ios::binary | std::ios::ate);
    auto size = static_cast<std::uintmax_t>(in.tellg());
    if (size == 0) {
        return;
    }
    std::string content(size, '\0');
    in.seekg(0);
    in.read(content.data(), static_cast<std::streamsize>(size));
    in.close();
    if (content.back() == '\n') {
        return;
    }
    auto last_nl = content.rfind('\n');
    fs::resize_file(file, last_nl == std::string::npos ? 0 : last_nl + 1);
}

template <typename Visit>
void scan_lines(const fs::path& file, Visit&& visit) {
    std::ifstream in(file, std::ios::binary);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty()) {
            visit(line, line_no);
        }
    }
}

RecordKey deadletter_key(const std::string& line, std::size_t line_no) {
    try {
        auto obj = ojson::parse(line);
        return RecordKey{obj.at("item_index").get<std::uint64_t>(),
                         obj.at("plan_seed").get<std::uint64_t>(),
                         obj.at("pair_id").get<std::string>()};
    } catch (const ojson::exception& e) {
        throw Error(ErrorKind::SchemaViolation, std::string("dead-letter record: ") + e.what(), line_no);
    }
}

std::uint64_t line_item_index(const std::string& line) {
    return ojson::parse(line).at("item_index").get<std::uint64_t>();
}

// Rewrites `file` sorted by item_index if an out-of-order append happened.
void sort_by_item_index(const fs::path& file) {
    std::vector<std::pair<std::uint64_t, std::string>> lines;
    bool sorted = true;
    scan_lines(file, [&](const std::string& line, std::size_t) {
        auto idx = line_item_index(line);
        if (!lines.empty() && idx < lines.back().first) {
            sorted = false;
        }
        lines.emplace_back(idx, line);
    });
    if (sorted) {
        return;
    }
    std::stable_sort(lines.begin(), lines.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    fs::path tmp = file;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        for (const auto& [idx, line] : lines) {
            out << line << '\n';
        }
    }
    fs::rename(tmp, file);
}

class Generator {
public:
    Generator(const ForgeInputs& inputs, llm::GenerationBackend& backend,
              const llm::DecodingConfig& cfg)
        : inputs_(inputs), backend_(backend), cfg_(cfg) {
        for (std::size_t i = 0; i < inputs.pairs->size(); ++i) {
            pair_index_.emplace((*inputs.pairs)[i].id, i);
        }
        descriptions_.resize(inputs.pairs->size());
    }

    Outcome run(const WorkItem& item) {
        DeadLetter dead{item.item_index, item.pair_id, item.prompt_id, {}, {}};
        try {
            auto it = pair_index_.find(item.pair_id);
            const prompt::PromptRecord* prompt = inputs_.pool->find(item.prompt_id);
            if (it == pair_index_.end() || prompt == nullptr) {
                throw Error(ErrorKind::PlanMismatch, "item refers to unknown pair or prompt");
            }
            const InitialPair& pair = (*inputs_.pairs)[it->second];

            auto result = llm::generate(backend_, item.composed_request, cfg_);
            if (result.finish_reason == llm::FinishReason::Error) {
                throw Error(ErrorKind::RemoteRefusal, "backend reported finish_reason=error");
            }
            if (result.text.empty()) {
                throw Error(ErrorKind::RemoteRefusal, "empty generation");
            }

            Triplet t;
            t.id = pair.id + "/" + std::to_string(item.item_index);
            t.audio_path = pair.audio_path;
            t.domain = pair.domain;
            t.description = description_of(it->second);
            t.prompt = prompt->text;
            t.prompt_id = prompt->prompt_id;
            t.target = std::move(result.text);
            t.transcript = pair.transcript;
            t.generator = GeneratorInfo{backend_.model_name(), cfg_.temperature, cfg_.top_p};
            t.plan_seed = inputs_.plan_seed;
            t.item_index = item.item_index;
            return t;
        } catch (const Error& e) {
            dead.error_kind = std::string(to_string(e.kind()));
            dead.message = e.what();
        } catch (const std::exception& e) {
            dead.error_kind = "Internal";
            dead.message = e.what();
        }
        return dead;
    }

private:
    const std::string& description_of(std::size_t pair) {
        std::lock_guard lock(mutex_);
        auto& text = descriptions_[pair];
        if (text.empty()) {
            text = description::serialize_description((*inputs_.pairs)[pair].description);
        }
        return text;
    }

    const ForgeInputs& inputs_;
    llm::GenerationBackend& backend_;
    const llm::DecodingConfig& cfg_;
    std::unordered_map<std::string, std::size_t> pair_index_;
    std::vector<std::string> descriptions_;
    std::mutex mutex_;
};

class ShardAppender {
public:
    ShardAppender(fs::path dir, std::size_t shard_size, std::uint64_t plan_seed)
        : dir_(std::move(dir)), shard_size_(shard_size), plan_seed_(plan_seed) {}

    void write(const Outcome& outcome) {
        if (const auto* t = std::get_if<Triplet>(&outcome)) {
            std::size_t shard = static_cast<std::size_t>(t->item_index / shard_size_);
            if (!shard_out_.is_open() || shard != current_shard_) {
                shard_out_.close();
                auto path = dir_ / shard_name(shard);
                shard_out_.open(path, std::ios::binary | std::ios::app);
                if (!shard_out_) {
                    throw Error(ErrorKind::Io, "cannot append to " + path.string());
                }
                current_shard_ = shard;
                touched_.insert(path);
            }
            shard_out_ << triplet_to_json(*t) << '\n';
        } else {
            if (!dead_out_.is_open()) {
                auto path = dir_ / kDeadLetterFile;
                dead_out_.open(path, std::ios::binary | std::ios::app);
                if (!dead_out_) {
                    throw Error(ErrorKind::Io, "cannot append to " + path.string());
                }
                touched_.insert(path);
            }
            dead_out_ << deadletter_to_json(std::get<DeadLetter>(outcome), plan_seed_) << '\n';
        }
    }

    void close() {
        shard_out_.close();
        dead_out_.close();
    }

    const std::set<fs::path>& touched() const { return touched_; }

private:
    fs::path dir_;
    std::size_t shard_size_;
    std::uint64_t plan_seed_;
    std::ofstream shard_out_;
    std::ofstream dead_out_;
    std::size_t current_shard_ = 0;
    std::set<fs::path> touched_;
};

void write_manifest(const fs::path& dir, const ForgeSummary& summary, std::uint64_t plan_seed,
                    const std::string& model_name, const llm::DecodingConfig& cfg,
                    const ForgeOptions& options) {
    ojson counts = ojson::object();
    for (Domain d : kAllDomains) {
        auto it = summary.domain_counts.find(d);
        counts[std::string(to_string(d))] = it == summary.domain_counts.end() ? 0 : it->second;
    }
    ojson shards = ojson::array();
    for (const auto& p : list_shards(dir)) {
        shards.push_back(p.filename().string());
    }
    ojson decoding{{"temperature", cfg.temperature},
                   {"top_p", cfg.top_p},
                   {"max_new_tokens", cfg.max_new_tokens}};
    if (cfg.system_prompt) {
        decoding["system_prompt"] = *cfg.system_prompt;
    }
    ojson manifest;
    manifest["plan_seed"] = plan_seed;
    manifest["counts"] = std::move(counts);
    manifest["triplets"] = summary.triplets;
    manifest["deadletters"] = summary.deadletters;
    manifest["backend"] = ojson{{"model_name", model_name}};
    manifest["decoding"] = std::move(decoding);
    manifest["rng"] = std::string(kRngName);
    manifest["shard_size"] = options.shard_size;
    manifest["shards"] = std::move(shards);
    manifest["tool_version"] = std::string(kToolVersion);
    manifest["config"] = options.config;
    std::ofstream out(dir / kManifestFile, std::ios::binary | std::ios::trunc);
    out << manifest.dump(2) << '\n';
}

} // namespace

ForgeSummary run_forge(const std::vector<WorkItem>& items, const ForgeInputs& inputs,
                       llm::GenerationBackend& backend, const llm::DecodingConfig& cfg,
                       const ForgeOptions& options) {
    if (items.empty()) {
        throw Error(ErrorKind::EmptyPlan, "nothing to forge");
    }
    if (inputs.pairs == nullptr || inputs.pool == nullptr) {
        throw Error(ErrorKind::Config, "forge inputs are incomplete");
    }
    if (options.shard_size == 0 || options.parallelism == 0) {
        throw Error(ErrorKind::Config, "shard_size and parallelism must be positive");
    }
    cfg.check();
    fs::create_directories(options.out_dir);
    OutputLock lock(options.out_dir);

    std::vector<const WorkItem*> order;
    order.reserve(items.size());
    for (const auto& item : items) {
        order.push_back(&item);
    }
    std::stable_sort(order.begin(), order.end(),
                     [](const WorkItem* a, const WorkItem* b) { return a->item_index < b->item_index; });

    Generator generator(inputs, backend, cfg);
    ShardAppender appender(options.out_dir, options.shard_size, inputs.plan_seed);

    const std::size_t n = order.size();
    const std::size_t window = std::max<std::size_t>(options.reorder_window, options.parallelism);
    std::mutex mutex;
    std::condition_variable ready;
    std::condition_variable space;
    std::map<std::size_t, Outcome> buffer;
    std::size_t written = 0;
    bool stop = false;
    std::atomic<std::size_t> next{0};

    auto worker = [&] {
        for (;;) {
            std::size_t pos = next.fetch_add(1);
            if (pos >= n) {
                return;
            }
            {
                std::unique_lock lk(mutex);
                space.wait(lk, [&] { return stop || pos < written + window; });
                if (stop) {
                    return;
                }
            }
            Outcome outcome = generator.run(*order[pos]);
            {
                std::lock_guard lk(mutex);
                buffer.emplace(pos, std::move(outcome));
            }
            ready.notify_all();
        }
    };

    ForgeSummary summary;
    {
        std::vector<std::jthread> pool;
        pool.reserve(options.parallelism);
        for (std::size_t i = 0; i < options.parallelism; ++i) {
            pool.emplace_back(worker);
        }
        try {
            while (written < n) {
                Outcome outcome;
                {
                    std::unique_lock lk(mutex);
                    ready.wait(lk, [&] { return buffer.count(written) != 0; });
                    auto node = buffer.extract(written);
                    outcome = std::move(node.mapped());
                }
                appender.write(outcome);
                {
                    std::lock_guard lk(mutex);
                    ++written;
                }
                space.notify_all();
                ++summary.processed;
                if (options.stop_after && summary.processed >= *options.stop_after && written < n) {
                    summary.interrupted = true;
                    break;
                }
            }
        } catch (...) {
            {
                std::lock_guard lk(mutex);
                stop = true;
            }
            space.notify_all();
            throw;
        }
        {
            std::lock_guard lk(mutex);
            stop = true;
        }
        space.notify_all();
    }
    appender.close();

    for (const auto& file : appender.touched()) {
        sort_by_item_index(file);
    }

    for_each_triplet(options.out_dir, [&](const Triplet& t) {
        ++summary.triplets;
        ++summary.domain_counts[t.domain];
    });
    if (fs::exists(options.out_dir / kDeadLetterFile)) {
        scan_lines(options.out_dir / kDeadLetterFile,
                   [&](const std::string&, std::size_t) { ++summary.deadletters; });
    }
    if (summary.interrupted) {
        return summary;
    }

    write_manifest(options.out_dir, summary, inputs.plan_seed, backend.model_name(), cfg, options);

    const std::size_t total = summary.triplets + summary.deadletters;
    if (total > 0 && static_cast<double>(summary.deadletters) / static_cast<double>(total) >
                         options.max_deadletter_fraction) {
        throw Error(ErrorKind::DeadLetterThreshold,
                    std::to_string(summary.deadletters) + " of " + std::to_string(total) +
                        " items failed (limit " + std::to_string(options.max_deadletter_fraction) + ")");
    }
    return summary;
}

std::vector<WorkItem> resume(const std::vector<WorkItem>& plan, std::uint64_t plan_seed,
                             const fs::path& out_dir) {
    std::unordered_map<std::uint64_t, const WorkItem*> by_index;
    for (const auto& item : plan) {
        by_index.emplace(item.item_index, &item);
    }
    std::set<std::uint64_t> done;
    auto record = [&](const RecordKey& key, std::size_t line_no) {
        if (key.plan_seed != plan_seed) {
            throw Error(ErrorKind::PlanMismatch,
                        "record from plan seed " + std::to_string(key.plan_seed) + ", expected " +
                            std::to_string(plan_seed),
                        line_no);
        }
        auto it = by_index.find(key.item_index);
        if (it == by_index.end() || it->second->pair_id != key.pair_id) {
            throw Error(ErrorKind::PlanMismatch,
                        "item " + std::to_string(key.item_index) + " does not belong to this plan", line_no);
        }
        done.insert(key.item_index);
    };

    for (const auto& shard : list_shards(out_dir)) {
        repair_tail(shard);
        scan_lines(shard, [&](const std::string& line, std::size_t line_no) {
            Triplet t = triplet_from_json(line, line_no);
            auto slash = t.id.rfind('/');
            record(RecordKey{t.item_index, t.plan_seed, slash == std::string::npos ? t.id : t.id.substr(0, slash)},
                   line_no);
        });
    }
    auto dead = out_dir / kDeadLetterFile;
    if (fs::exists(dead)) {
        repair_tail(dead);
        scan_lines(dead, [&](const std::string& line, std::size_t line_no) {
            record(deadletter_key(line, line_no), line_no);
        });
    }

    std::vector<WorkItem> remaining;
    for (const auto& item : plan) {
        if (done.count(item.item_index) == 0) {
            remaining.push_back(item);
        }
    }
    return remaining;
}

} // namespace desta::forge
