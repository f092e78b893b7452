// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "desta/description.hpp"
#include "desta/domain.hpp"
#include "desta/llm_backend.hpp"
#include "desta/prompt_pool.hpp"

namespace desta::forge {

inline constexpr std::string_view kToolVersion = "0.3.0";
inline constexpr std::size_t kDefaultShardSize = 10'000;

/// One (audio, description) pair of the initial dataset.
struct InitialPair {
    std::string id;
    Domain domain = Domain::Speech;
    std::string audio_path;
    description::AudioDescription description;
    std::optional<std::string> transcript;
};

/// Builds pairs from interchange records. Ids must be unique; transcripts are
/// only allowed on speech records. Throws Error(SchemaViolation | MissingSpan).
std::vector<InitialPair> pairs_from_metadata(const std::vector<description::MetadataRecord>& records);

struct WorkItem {
    std::uint64_t item_index = 0;
    std::string pair_id;
    std::string prompt_id;
    std::string composed_request;
    std::uint64_t seed_lane = 0;
    bool operator==(const WorkItem&) const = default;
};

struct BalanceConfig {
    std::map<Domain, double> weights;
    std::int64_t prompts_per_pair = 1;
    /// Draw prompts without replacement for repeated occurrences of a pair
    /// (until the domain's prompts are exhausted).
    bool distinct_prompts = false;

    /// Throws Error(ZeroWeight) on a non-positive or missing weight.
    void normalize();

    /// "speech=0.77,sound=0.14,music=0.07"
    static std::map<Domain, double> parse_weights(std::string_view text);
};

/// seed_lane of an item: stable hash of (plan seed, item index).
std::uint64_t derive_seed_lane(std::uint64_t plan_seed, std::uint64_t item_index);

/// Per-domain quotas from the weights (largest remainder rounding, so the
/// quotas sum to the base item count and each deviates from weight * total by
/// less than one).
std::map<Domain, std::int64_t> domain_quotas(const std::map<Domain, double>& weights,
                                             std::int64_t total);

/// Pure function of its inputs. Domains without a weight are left out.
/// Throws Error(EmptyDomain | ZeroWeight | EmptyDomain from the pool).
std::vector<WorkItem> plan_pairs(const std::vector<InitialPair>& initial,
                                 const prompt::PromptPool& pool, BalanceConfig cfg,
                                 std::uint64_t seed);

struct GeneratorInfo {
    std::string model_name;
    double temperature = 0.0;
    double top_p = 1.0;
    bool operator==(const GeneratorInfo&) const = default;
};

struct Triplet {
    std::string id;
    std::string audio_path;
    Domain domain = Domain::Speech;
    std::string description;
    std::string prompt;
    std::string prompt_id;
    std::string target;
    std::optional<std::string> transcript;
    GeneratorInfo generator;
    std::uint64_t plan_seed = 0;
    std::uint64_t item_index = 0;
    /// Fields this version does not know about, kept in file order.
    nlohmann::ordered_json extra = nlohmann::ordered_json::object();

    bool operator==(const Triplet&) const = default;
};

std::string triplet_to_json(const Triplet& t);

/// Throws Error(SchemaViolation) tagged with `line_no`.
Triplet triplet_from_json(std::string_view line, std::size_t line_no = 0);

void write_shard(const std::vector<Triplet>& triplets, const std::filesystem::path& path);

/// `path` is one shard file or a directory of `shard-#####.jsonl` files.
std::vector<Triplet> read_shards(const std::filesystem::path& path);

/// Streams records without holding them all in memory.
void for_each_triplet(const std::filesystem::path& path,
                      const std::function<void(const Triplet&)>& visit);

std::vector<std::filesystem::path> list_shards(const std::filesystem::path& dir);

std::string shard_name(std::size_t shard);

struct ForgeInputs {
    const std::vector<InitialPair>* pairs = nullptr;
    const prompt::PromptPool* pool = nullptr;
    std::uint64_t plan_seed = 0;
};

struct ForgeOptions {
    std::filesystem::path out_dir;
    std::size_t parallelism = 1;
    std::size_t shard_size = kDefaultShardSize;
    double max_deadletter_fraction = 0.01;
    /// Bound on completed-but-unwritten items held in the reorder buffer.
    std::size_t reorder_window = 1024;
    /// Simulates an interruption after this many records have been written.
    std::optional<std::size_t> stop_after;
    /// Echoed into manifest.json under "config".
    nlohmann::ordered_json config = nlohmann::ordered_json::object();
};

struct ForgeSummary {
    std::size_t triplets = 0;    // whole output directory
    std::size_t deadletters = 0; // whole output directory
    std::size_t processed = 0;   // this call
    bool interrupted = false;
    std::map<Domain, std::size_t> domain_counts;
};

/// Generates one triplet or one dead-letter record per item, appending to the
/// shards of `out_dir` in item_index order regardless of parallelism. Items
/// already present in the directory must not be passed again (see resume()).
/// Throws Error(EmptyPlan | OutputLocked), and Error(DeadLetterThreshold)
/// after all outputs are written when too many items failed.
ForgeSummary run_forge(const std::vector<WorkItem>& items, const ForgeInputs& inputs,
                       llm::GenerationBackend& backend, const llm::DecodingConfig& cfg,
                       const ForgeOptions& options);

/// Items of `plan` that have neither a triplet nor a dead-letter record in
/// `out_dir`. A torn final line left by a crash is truncated away.
/// Throws Error(PlanMismatch) if the directory holds records of another plan.
std::vector<WorkItem> resume(const std::vector<WorkItem>& plan, std::uint64_t plan_seed,
                             const std::filesystem::path& out_dir);

} // namespace desta::forge
