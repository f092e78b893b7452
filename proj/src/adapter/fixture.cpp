// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#include <cmath>
#include <fstream>
#include <set>

#include "desta/adapter/train.hpp"
#include "desta/error.hpp"

namespace desta::adapter {

namespace {

constexpr const char* kFixtureFormat = "desta-planted-fixture";

Matrix gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
    Matrix m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) {
            m(r, c) = stddev * standard_normal(rng);
        }
    }
    return m;
}

std::vector<int> random_tokens(Rng& rng, int count, int vocab) {
    std::vector<int> out(static_cast<std::size_t>(count));
    for (auto& t : out) {
        t = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(vocab)));
    }
    return out;
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
    if (auto it = j.find(key); it != j.end()) {
        try {
            out = it->get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::Config, std::string("fixture field ") + key + ": " + e.what());
        }
    }
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
    std::set<std::string> allowed(known.begin(), known.end());
    for (const auto& [key, _] : j.items()) {
        if (!allowed.contains(key)) {
            throw Error(ErrorKind::Config, "unknown " + where + " field '" + key + "'");
        }
    }
}

} // namespace

nlohmann::ordered_json FixtureSpec::to_json() const {
    nlohmann::ordered_json j;
    j["format"] = kFixtureFormat;
    j["version"] = 1;
    j["seed"] = seed;
    j["samples"] = samples;
    j["time_steps"] = time_steps;
    j["prompt_len"] = prompt_len;
    j["target_len"] = target_len;
    j["transcript_min"] = transcript_min;
    j["transcript_max"] = transcript_max;
    j["transcript_fraction"] = transcript_fraction;
    j["layer_ids"] = layer_ids;
    j["dims"] = {{"d", dims.d}, {"dp", dims.d_out}, {"N", dims.queries}, {"B", dims.blocks}, {"H", dims.heads}};
    j["decoder"] = {{"vocab", decoder.vocab},
                    {"width", decoder.width},
                    {"max_len", decoder.max_len},
                    {"heads", decoder.heads},
                    {"head_scale", decoder.head_scale}};
    return j;
}

FixtureSpec FixtureSpec::from_json(const nlohmann::json& j) {
    if (!j.is_object()) {
        throw Error(ErrorKind::Config, "fixture must be a JSON object");
    }
    reject_unknown(j,
                   {"format", "version", "seed", "samples", "time_steps", "prompt_len", "target_len",
                    "transcript_min", "transcript_max", "transcript_fraction", "layer_ids", "dims", "decoder"},
                   "fixture");
    if (j.value("format", std::string()) != kFixtureFormat) {
        throw Error(ErrorKind::Config, std::string("fixture format must be \"") + kFixtureFormat + "\"");
    }
    if (j.value("version", 0) != 1) {
        throw Error(ErrorKind::Config, "unsupported fixture version");
    }
    FixtureSpec s;
    read_field(j, "seed", s.seed);
    read_field(j, "samples", s.samples);
    read_field(j, "time_steps", s.time_steps);
    read_field(j, "prompt_len", s.prompt_len);
    read_field(j, "target_len", s.target_len);
    read_field(j, "transcript_min", s.transcript_min);
    read_field(j, "transcript_max", s.transcript_max);
    read_field(j, "transcript_fraction", s.transcript_fraction);
    read_field(j, "layer_ids", s.layer_ids);
    if (auto it = j.find("dims"); it != j.end()) {
        reject_unknown(*it, {"d", "dp", "N", "B", "H"}, "dims");
        read_field(*it, "d", s.dims.d);
        read_field(*it, "dp", s.dims.d_out);
        read_field(*it, "N", s.dims.queries);
        read_field(*it, "B", s.dims.blocks);
        read_field(*it, "H", s.dims.heads);
    }
    if (auto it = j.find("decoder"); it != j.end()) {
        reject_unknown(*it, {"vocab", "width", "max_len", "heads", "head_scale"}, "decoder");
        read_field(*it, "vocab", s.decoder.vocab);
        read_field(*it, "width", s.decoder.width);
        read_field(*it, "max_len", s.decoder.max_len);
        read_field(*it, "heads", s.decoder.heads);
        read_field(*it, "head_scale", s.decoder.head_scale);
    }
    if (s.samples < 1 || s.time_steps < 1 || s.prompt_len < 0 || s.target_len < 1 || s.transcript_min < 1 ||
        s.transcript_max < s.transcript_min || s.transcript_fraction < 0.0 || s.transcript_fraction > 1.0 ||
        s.layer_ids.empty()) {
        throw Error(ErrorKind::Config, "fixture sizes out of range");
    }
    if (s.decoder.width != s.dims.d_out) {
        throw Error(ErrorKind::WidthMismatch, "decoder width " + std::to_string(s.decoder.width) +
                                                  " vs adapter output width " + std::to_string(s.dims.d_out));
    }
    return s;
}

Fixture make_fixture(const FixtureSpec& spec) {
    Fixture fx;
    fx.spec = spec;
    fx.decoder = init_decoder(spec.decoder, hash_pair(spec.seed, 1));
    fx.planted = init_adapter(spec.dims, spec.layer_ids, hash_pair(spec.seed, 2));

    Rng rng(hash_pair(spec.seed, 3));
    const auto layers = static_cast<Eigen::Index>(spec.layer_ids.size());
    fx.planted.aggregation.alpha_logits = gaussian(rng, 1, layers, 1.0);

    // Deeper layers are different nonlinear views of one latent sequence.
    std::vector<Matrix> mixing;
    for (Eigen::Index l = 0; l < layers; ++l) {
        mixing.push_back(gaussian(rng, spec.dims.d, spec.dims.d, 1.0 / std::sqrt(static_cast<double>(spec.dims.d))));
    }
    for (int s = 0; s < spec.samples; ++s) {
        FusionBatch b;
        Matrix latent = gaussian(rng, spec.time_steps, spec.dims.d, 1.0);
        for (const auto& m : mixing) {
            Matrix h = 2.0 * (latent * m).array().tanh().matrix() + gaussian(rng, spec.time_steps, spec.dims.d, 0.1);
            b.states.push_back(std::move(h));
        }
        b.prompt = random_tokens(rng, spec.prompt_len, spec.decoder.vocab);
        if (uniform_real(rng) < spec.transcript_fraction) {
            const auto span = static_cast<std::uint64_t>(spec.transcript_max - spec.transcript_min + 1);
            const int len = spec.transcript_min + static_cast<int>(uniform_index(rng, span));
            b.transcript = random_tokens(rng, len, spec.decoder.vocab);
        }
        b.target = greedy_decode(fx.planted, fx.decoder, b, spec.target_len);
        fx.samples.push_back(std::move(b));
    }
    return fx;
}

Fixture load_fixture(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::Io, "cannot open " + path.string());
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::Config, path.string() + ": " + e.what());
    }
    return make_fixture(FixtureSpec::from_json(j));
}

void save_fixture_spec(const std::filesystem::path& path, const FixtureSpec& spec) {
    std::ofstream out(path, std::ios::trunc);
    out << spec.to_json().dump(2) << "\n";
    if (!out) {
        throw Error(ErrorKind::Io, "cannot write " + path.string());
    }
}

} // namespace desta::adapter
