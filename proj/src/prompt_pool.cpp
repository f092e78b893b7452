// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#include "desta/prompt_pool.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "desta/error.hpp"

namespace desta::prompt {

namespace {

std::size_t slot(Domain d) {
    return static_cast<std::size_t>(d);
}

bool blank(std::string_view s) {
    return s.find_first_not_of(" \t\r") == std::string_view::npos;
}

} // namespace

PromptPool PromptPool::from_records(std::vector<PromptRecord> records) {
    if (records.empty()) {
        throw Error(ErrorKind::EmptyPool, "pool has no prompts");
    }
    PromptPool pool;
    pool.records_ = std::move(records);
    for (std::size_t i = 0; i < pool.records_.size(); ++i) {
        const auto& r = pool.records_[i];
        if (r.text.empty()) {
            throw Error(ErrorKind::SchemaViolation, "prompt '" + r.prompt_id + "' has empty text");
        }
        if (!pool.by_id_.emplace(r.prompt_id, i).second) {
            throw Error(ErrorKind::DuplicatePromptId, r.prompt_id);
        }
        pool.by_domain_[slot(r.domain)].push_back(i);
    }
    return pool;
}

std::span<const std::size_t> PromptPool::domain_indices(Domain domain) const {
    return by_domain_[slot(domain)];
}

const PromptRecord* PromptPool::find(std::string_view prompt_id) const {
    auto it = by_id_.find(std::string(prompt_id));
    return it == by_id_.end() ? nullptr : &records_[it->second];
}

PromptPool parse_pool(std::string_view text) {
    std::vector<PromptRecord> records;
    std::unordered_map<std::string, std::size_t> seen;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (blank(line)) {
            continue;
        }
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw Error(ErrorKind::SchemaViolation, e.what(), line_no);
        }
        for (const char* key : {"prompt_id", "domain", "text"}) {
            if (!obj.is_object() || !obj.contains(key) || !obj[key].is_string()) {
                throw Error(ErrorKind::SchemaViolation,
                            std::string("field '") + key + "' must be a string", line_no);
            }
        }
        PromptRecord rec;
        rec.prompt_id = obj["prompt_id"].get<std::string>();
        auto domain = obj["domain"].get<std::string>();
        auto parsed = parse_domain(domain);
        if (!parsed) {
            throw Error(ErrorKind::UnknownDomain, "'" + domain + "'", line_no);
        }
        rec.domain = *parsed;
        rec.text = obj["text"].get<std::string>();
        if (rec.text.empty()) {
            throw Error(ErrorKind::SchemaViolation, "empty prompt text", line_no);
        }
        if (!seen.emplace(rec.prompt_id, line_no).second) {
            throw Error(ErrorKind::DuplicatePromptId, rec.prompt_id, line_no);
        }
        records.push_back(std::move(rec));
    }
    return PromptPool::from_records(std::move(records));
}

PromptPool load_pool(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::Io, "cannot open " + path.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_pool(buf.str());
}

const PromptRecord& sample_prompt(const PromptPool& pool, Rng& rng, Domain domain) {
    auto indices = pool.domain_indices(domain);
    if (indices.empty()) {
        throw Error(ErrorKind::EmptyDomain,
                    "no prompts for domain " + std::string(to_string(domain)));
    }
    return pool.records()[indices[uniform_index(rng, indices.size())]];
}

std::string compose_request(std::string_view description, std::string_view prompt) {
    std::string out;
    out.reserve(description.size() + 1 + prompt.size());
    out.append(description);
    out.push_back(' ');
    out.append(prompt);
    return out;
}

} // namespace desta::prompt
