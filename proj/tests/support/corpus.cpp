// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#include "corpus.hpp"

#include <random>
#include <string>

namespace desta::testing {

namespace {

using description::AudioDescription;
using description::Bare;
using description::KeyValue;
using description::Segment;
using description::Timestamp;

const std::string kAlphabet = "abcXYZ019 ()[],:\\.-!'\"~\xc3\xa9";

std::string random_text(std::mt19937_64& gen, std::size_t max_len, bool allow_empty) {
    std::size_t len = gen() % (max_len + 1);
    if (!allow_empty && len == 0) {
        len = 1;
    }
    std::string s;
    while (s.size() < len) {
        char c = kAlphabet[gen() % kAlphabet.size()];
        if (c == '\xc3') {
            s += "\xc3\xa9";
            continue;
        }
        if (c == '\xa9') {
            continue;
        }
        s.push_back(c);
    }
    while (!s.empty() && s.front() == ' ') {
        s.erase(s.begin());
    }
    while (!s.empty() && s.back() == ' ') {
        s.pop_back();
    }
    if (!allow_empty && s.empty()) {
        s = "x";
    }
    return s;
}

} // namespace

std::vector<AudioDescription> description_corpus(std::uint64_t seed, std::size_t count) {
    std::mt19937_64 gen(seed);
    std::vector<AudioDescription> out;
    out.reserve(count);
    for (std::size_t n = 0; n < count; ++n) {
        AudioDescription d;
        std::size_t segments = 1 + gen() % 4;
        std::int64_t start = static_cast<std::int64_t>(gen() % 5000);
        for (std::size_t s = 0; s < segments; ++s) {
            Segment seg;
            start += static_cast<std::int64_t>(gen() % 3);
            seg.start = Timestamp::whole(start);
            seg.end = Timestamp::whole(start + static_cast<std::int64_t>(gen() % 30));
            seg.content = random_text(gen, 24, true);
            std::size_t attrs = gen() % 4;
            for (std::size_t a = 0; a < attrs; ++a) {
                if (gen() % 3 == 0) {
                    seg.attributes.push_back(Bare{random_text(gen, 16, false)});
                } else {
                    seg.attributes.push_back(KeyValue{random_text(gen, 10, false), random_text(gen, 12, true)});
                }
            }
            std::size_t bare = 0;
            for (const auto& entry : seg.attributes) {
                bare += std::holds_alternative<Bare>(entry) ? 1 : 0;
            }
            if (bare > 1 && bare == seg.attributes.size()) {
                seg.attributes.resize(1);
            }
            d.segments.push_back(std::move(seg));
        }
        out.push_back(std::move(d));
    }
    return out;
}

} // namespace desta::testing
