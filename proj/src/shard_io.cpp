// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "desta/error.hpp"
#include "desta/forge.hpp"

namespace desta::forge {

namespace {

using ojson = nlohmann::ordered_json;

constexpr const char* kKnownFields[] = {"id",     "audio_path", "domain",    "description",
                                        "prompt", "prompt_id",  "target",    "transcript",
                                        "generator", "plan_seed", "item_index"};

[[noreturn]] void violation(const std::string& msg, std::size_t line_no) {
    throw Error(ErrorKind::SchemaViolation, msg,
                line_no == 0 ? std::nullopt : std::optional<std::size_t>(line_no));
}

std::string get_string(const ojson& obj, const char* key, std::size_t line_no) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_string()) {
        violation(std::string("missing or non-string field '") + key + "'", line_no);
    }
    return it->get<std::string>();
}

std::uint64_t get_u64(const ojson& obj, const char* key, std::size_t line_no) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_number_unsigned()) {
        violation(std::string("missing or non-integer field '") + key + "'", line_no);
    }
    return it->get<std::uint64_t>();
}

double get_number(const ojson& obj, const char* key, std::size_t line_no) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_number()) {
        violation(std::string("missing or non-numeric field '") + key + "'", line_no);
    }
    return it->get<double>();
}

} // namespace

std::string shard_name(std::size_t shard) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "shard-%05zu.jsonl", shard);
    return buf;
}

std::string triplet_to_json(const Triplet& t) {
    ojson obj;
    obj["id"] = t.id;
    obj["audio_path"] = t.audio_path;
    obj["domain"] = std::string(to_string(t.domain));
    obj["description"] = t.description;
    obj["prompt"] = t.prompt;
    obj["prompt_id"] = t.prompt_id;
    obj["target"] = t.target;
    if (t.transcript) {
        obj["transcript"] = *t.transcript;
    }
    obj["generator"] = ojson{{"model_name", t.generator.model_name},
                             {"temperature", t.generator.temperature},
                             {"top_p", t.generator.top_p}};
    obj["plan_seed"] = t.plan_seed;
    obj["item_index"] = t.item_index;
    for (const auto& [key, value] : t.extra.items()) {
        obj[key] = value;
    }
    return obj.dump();
}

Triplet triplet_from_json(std::string_view line, std::size_t line_no) {
    ojson obj;
    try {
        obj = ojson::parse(line);
    } catch (const ojson::parse_error& e) {
        violation(std::string("invalid JSON: ") + e.what(), line_no);
    }
    if (!obj.is_object()) {
        violation("record must be an object", line_no);
    }
    Triplet t;
    t.id = get_string(obj, "id", line_no);
    t.audio_path = get_string(obj, "audio_path", line_no);
    auto domain = parse_domain(get_string(obj, "domain", line_no));
    if (!domain) {
        violation("unknown domain", line_no);
    }
    t.domain = *domain;
    t.description = get_string(obj, "description", line_no);
    t.prompt = get_string(obj, "prompt", line_no);
    t.prompt_id = get_string(obj, "prompt_id", line_no);
    t.target = get_string(obj, "target", line_no);
    if (t.target.empty()) {
        violation("empty target", line_no);
    }
    if (auto it = obj.find("transcript"); it != obj.end() && !it->is_null()) {
        if (!it->is_string()) {
            violation("non-string transcript", line_no);
        }
        t.transcript = it->get<std::string>();
    }
    auto gen = obj.find("generator");
    if (gen == obj.end() || !gen->is_object()) {
        violation("missing field 'generator'", line_no);
    }
    t.generator.model_name = get_string(*gen, "model_name", line_no);
    t.generator.temperature = get_number(*gen, "temperature", line_no);
    t.generator.top_p = get_number(*gen, "top_p", line_no);
    t.plan_seed = get_u64(obj, "plan_seed", line_no);
    t.item_index = get_u64(obj, "item_index", line_no);
    try {
        (void)description::parse_description(t.description);
    } catch (const Error& e) {
        violation(std::string("description does not parse: ") + e.what(), line_no);
    }
    for (const auto& [key, value] : obj.items()) {
        if (std::find_if(std::begin(kKnownFields), std::end(kKnownFields),
                         [&](const char* k) { return key == k; }) == std::end(kKnownFields)) {
            t.extra[key] = value;
        }
    }
    return t;
}

void write_shard(const std::vector<Triplet>& triplets, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorKind::Io, "cannot write " + path.string());
    }
    for (const auto& t : triplets) {
        out << triplet_to_json(t) << '\n';
    }
}

std::vector<std::filesystem::path> list_shards(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> shards;
    if (!std::filesystem::is_directory(dir)) {
        return shards;
    }
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        auto name = entry.path().filename().string();
        if (entry.is_regular_file() && name.rfind("shard-", 0) == 0 &&
            name.size() > 6 && name.ends_with(".jsonl")) {
            shards.push_back(entry.path());
        }
    }
    std::sort(shards.begin(), shards.end());
    return shards;
}

void for_each_triplet(const std::filesystem::path& path,
                      const std::function<void(const Triplet&)>& visit) {
    std::vector<std::filesystem::path> files;
    if (std::filesystem::is_directory(path)) {
        files = list_shards(path);
    } else {
        files.push_back(path);
    }
    for (const auto& file : files) {
        std::ifstream in(file, std::ios::binary);
        if (!in) {
            throw Error(ErrorKind::Io, "cannot open " + file.string());
        }
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) {
                continue;
            }
            visit(triplet_from_json(line, line_no));
        }
    }
}

std::vector<Triplet> read_shards(const std::filesystem::path& path) {
    std::vector<Triplet> out;
    for_each_triplet(path, [&](const Triplet& t) { out.push_back(t); });
    return out;
}

} // namespace desta::forge
