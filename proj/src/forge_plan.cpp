// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "desta/error.hpp"
#include "desta/forge.hpp"
#include "desta/rng.hpp"

namespace desta::forge {

namespace {

constexpr std::uint64_t kMixSalt = 0x6D69782D6F726465ULL;

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

} // namespace

std::vector<InitialPair> pairs_from_metadata(const std::vector<description::MetadataRecord>& records) {
    std::vector<InitialPair> pairs;
    pairs.reserve(records.size());
    std::unordered_set<std::string> ids;
    for (const auto& rec : records) {
        if (!ids.insert(rec.id).second) {
            throw Error(ErrorKind::SchemaViolation, "duplicate record id '" + rec.id + "'");
        }
        if (rec.transcript && rec.domain != Domain::Speech) {
            throw Error(ErrorKind::SchemaViolation,
                        "record '" + rec.id + "': only speech records may carry a transcript");
        }
        InitialPair p;
        p.id = rec.id;
        p.domain = rec.domain;
        p.audio_path = rec.audio_path;
        p.description = description::build_description(rec);
        p.transcript = rec.transcript;
        pairs.push_back(std::move(p));
    }
    return pairs;
}

void BalanceConfig::normalize() {
    if (weights.empty()) {
        throw Error(ErrorKind::ZeroWeight, "no domain weights configured");
    }
    double sum = 0.0;
    for (const auto& [domain, w] : weights) {
        if (!(w > 0.0) || !std::isfinite(w)) {
            throw Error(ErrorKind::ZeroWeight,
                        "weight for " + std::string(to_string(domain)) + " must be positive");
        }
        sum += w;
    }
    for (auto& [domain, w] : weights) {
        w /= sum;
    }
    if (prompts_per_pair < 1) {
        throw Error(ErrorKind::Config, "prompts_per_pair must be positive");
    }
}

std::map<Domain, double> BalanceConfig::parse_weights(std::string_view text) {
    std::map<Domain, double> out;
    while (!text.empty()) {
        auto comma = text.find(',');
        auto item = trim(text.substr(0, comma));
        text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
        if (item.empty()) {
            continue;
        }
        auto eq = item.find('=');
        if (eq == std::string_view::npos) {
            throw Error(ErrorKind::Config, "expected domain=weight, got '" + std::string(item) + "'");
        }
        Domain d = require_domain(trim(item.substr(0, eq)));
        std::string value(trim(item.substr(eq + 1)));
        double w = 0.0;
        try {
            std::size_t used = 0;
            w = std::stod(value, &used);
            if (used != value.size()) {
                throw std::invalid_argument(value);
            }
        } catch (const std::exception&) {
            throw Error(ErrorKind::Config, "bad weight '" + value + "'");
        }
        out[d] = w;
    }
    return out;
}

std::uint64_t derive_seed_lane(std::uint64_t plan_seed, std::uint64_t item_index) {
    return hash_pair(plan_seed, item_index);
}

std::map<Domain, std::int64_t> domain_quotas(const std::map<Domain, double>& weights,
                                             std::int64_t total) {
    std::map<Domain, std::int64_t> quotas;
    std::vector<std::pair<double, Domain>> remainders;
    std::int64_t assigned = 0;
    for (const auto& [domain, w] : weights) {
        double exact = w * static_cast<double>(total);
        auto q = static_cast<std::int64_t>(std::floor(exact));
        quotas[domain] = q;
        assigned += q;
        remainders.emplace_back(exact - static_cast<double>(q), domain);
    }
    // Ties go to the earlier domain.
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < total && i < remainders.size(); ++i, ++assigned) {
        ++quotas[remainders[i].second];
    }
    return quotas;
}

std::vector<WorkItem> plan_pairs(const std::vector<InitialPair>& initial,
                                 const prompt::PromptPool& pool, BalanceConfig cfg,
                                 std::uint64_t seed) {
    cfg.normalize();

    std::map<Domain, std::vector<std::size_t>> by_domain;
    for (std::size_t i = 0; i < initial.size(); ++i) {
        by_domain[initial[i].domain].push_back(i);
    }
    std::int64_t total = 0;
    for (const auto& [domain, w] : cfg.weights) {
        auto it = by_domain.find(domain);
        if (it == by_domain.end() || it->second.empty()) {
            throw Error(ErrorKind::EmptyDomain,
                        "no pairs for weighted domain " + std::string(to_string(domain)));
        }
        total += static_cast<std::int64_t>(it->second.size()) * cfg.prompts_per_pair;
    }

    // Fill each domain's quota round-robin over a seeded shuffle of its pairs.
    std::vector<std::size_t> slots;
    slots.reserve(static_cast<std::size_t>(total));
    for (const auto& [domain, quota] : domain_quotas(cfg.weights, total)) {
        std::vector<std::size_t> order = by_domain[domain];
        Rng rng(hash_pair(seed, static_cast<std::uint64_t>(domain) + 1));
        shuffle(order, rng);
        for (std::int64_t k = 0; k < quota; ++k) {
            slots.push_back(order[static_cast<std::size_t>(k) % order.size()]);
        }
    }
    Rng mix(hash_pair(seed, kMixSalt));
    shuffle(slots, mix);

    std::vector<std::string> descriptions(initial.size());
    std::unordered_map<std::size_t, std::set<std::string>> used_prompts;
    std::vector<WorkItem> items;
    items.reserve(slots.size());
    for (std::size_t index = 0; index < slots.size(); ++index) {
        const InitialPair& pair = initial[slots[index]];
        WorkItem item;
        item.item_index = index;
        item.pair_id = pair.id;
        item.seed_lane = derive_seed_lane(seed, index);

        Rng lane(item.seed_lane);
        const prompt::PromptRecord* chosen = &prompt::sample_prompt(pool, lane, pair.domain);
        if (cfg.distinct_prompts) {
            auto& used = used_prompts[slots[index]];
            const std::size_t available = pool.domain_indices(pair.domain).size();
            while (used.count(chosen->prompt_id) != 0 && used.size() < available) {
                chosen = &prompt::sample_prompt(pool, lane, pair.domain);
            }
            used.insert(chosen->prompt_id);
        }
        item.prompt_id = chosen->prompt_id;

        auto& text = descriptions[slots[index]];
        if (text.empty()) {
            text = description::serialize_description(pair.description);
        }
        item.composed_request = prompt::compose_request(text, chosen->text);
        items.push_back(std::move(item));
    }
    return items;
}

} // namespace desta::forge
