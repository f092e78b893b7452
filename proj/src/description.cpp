// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#include "desta/description.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "desta/error.hpp"

namespace desta::description {

namespace {

constexpr std::string_view kReserved = "\\(),:";

bool is_space(char c) {
    return std::isspace(static_cast<unsigned char>(c)) != 0;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && is_space(s.front())) {
        s.remove_prefix(1);
    }
    while (!s.empty() && is_space(s.back())) {
        s.remove_suffix(1);
    }
    return s;
}

// Trims whitespace on the right unless the last character is escaped.
std::string_view trim_raw(std::string_view s) {
    while (!s.empty() && is_space(s.front())) {
        s.remove_prefix(1);
    }
    while (!s.empty() && is_space(s.back())) {
        std::size_t backslashes = 0;
        for (std::size_t i = s.size() - 1; i > 0 && s[i - 1] == '\\'; --i) {
            ++backslashes;
        }
        if (backslashes % 2 == 1) {
            break;
        }
        s.remove_suffix(1);
    }
    return s;
}

std::string unescape(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (raw[i] == '\\' && i + 1 < raw.size()) {
            out.push_back(raw[++i]);
        } else {
            out.push_back(raw[i]);
        }
    }
    return out;
}

bool all_digits(std::string_view s) {
    if (s.empty()) {
        return false;
    }
    for (char c : s) {
        if (c < '0' || c > '9') {
            return false;
        }
    }
    return true;
}

std::int64_t to_int(std::string_view s) {
    std::int64_t v = 0;
    for (char c : s) {
        v = v * 10 + (c - '0');
    }
    return v;
}

// Splits `raw` at unescaped occurrences of `sep` that are not nested inside
// parentheses.
std::vector<std::string_view> split_top_level(std::string_view raw, char sep) {
    std::vector<std::string_view> parts;
    int depth = 0;
    std::size_t begin = 0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        char c = raw[i];
        if (c == '\\') {
            ++i;
            continue;
        }
        if (c == '(') {
            ++depth;
        } else if (c == ')') {
            --depth;
        } else if (c == sep && depth == 0) {
            parts.push_back(raw.substr(begin, i - begin));
            begin = i + 1;
        }
    }
    parts.push_back(raw.substr(begin));
    return parts;
}

std::optional<std::size_t> find_unescaped(std::string_view raw, char target) {
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (raw[i] == '\\') {
            ++i;
            continue;
        }
        if (raw[i] == target) {
            return i;
        }
    }
    return std::nullopt;
}

std::vector<AttributeEntry> parse_attribute_group(std::string_view group, std::size_t line_no) {
    std::vector<AttributeEntry> entries;
    if (!find_unescaped(group, ':')) {
        auto text = trim_raw(group);
        if (!text.empty()) {
            entries.emplace_back(Bare{unescape(text)});
        }
        return entries;
    }
    for (std::string_view part : split_top_level(group, ',')) {
        part = trim_raw(part);
        if (part.empty()) {
            continue;
        }
        auto colon = find_unescaped(part, ':');
        if (!colon) {
            entries.emplace_back(Bare{unescape(part)});
            continue;
        }
        auto name = trim_raw(part.substr(0, *colon));
        auto value = trim_raw(part.substr(*colon + 1));
        if (name.empty()) {
            throw Error(ErrorKind::MalformedAttribute,
                        "attribute with empty name in '" + std::string(part) + "'", line_no);
        }
        entries.emplace_back(KeyValue{unescape(name), unescape(value)});
    }
    return entries;
}

Segment parse_line(std::string_view line, std::size_t line_no) {
    line = trim(line);
    if (line.front() != '[') {
        throw Error(ErrorKind::MalformedTimestamp, "line must start with '['", line_no);
    }
    auto close = line.find(']');
    if (close == std::string_view::npos) {
        throw Error(ErrorKind::MalformedTimestamp, "missing ']'", line_no);
    }
    auto header = line.substr(1, close - 1);
    auto dash = header.find('-');
    if (dash == std::string_view::npos || header.find('-', dash + 1) != std::string_view::npos) {
        throw Error(ErrorKind::MalformedTimestamp,
                    "expected [start-end], got [" + std::string(header) + "]", line_no);
    }
    auto start = parse_timestamp(header.substr(0, dash));
    auto end = parse_timestamp(header.substr(dash + 1));
    if (!start || !end) {
        throw Error(ErrorKind::MalformedTimestamp, "bad timestamp in [" + std::string(header) + "]",
                    line_no);
    }

    Segment seg;
    seg.start = *start;
    seg.end = *end;

    std::string_view rest = trim_raw(line.substr(close + 1));
    int depth = 0;
    std::optional<std::size_t> group_open;
    std::optional<std::size_t> group_close;
    for (std::size_t i = 0; i < rest.size(); ++i) {
        char c = rest[i];
        if (c == '\\') {
            ++i;
            continue;
        }
        if (c == '(') {
            if (depth == 0) {
                group_open = i;
            }
            ++depth;
        } else if (c == ')') {
            if (depth == 0) {
                throw Error(ErrorKind::UnbalancedParentheses, "unmatched ')'", line_no);
            }
            --depth;
            if (depth == 0) {
                group_close = i;
            }
        }
    }
    if (depth != 0) {
        throw Error(ErrorKind::UnbalancedParentheses, "unclosed '('", line_no);
    }

    std::string_view content_raw = rest;
    if (group_close && *group_close + 1 == rest.size()) {
        seg.attributes =
            parse_attribute_group(rest.substr(*group_open + 1, *group_close - *group_open - 1), line_no);
        content_raw = rest.substr(0, *group_open);
    }
    seg.content = unescape(trim_raw(content_raw));
    return seg;
}

void check_text(std::vector<Violation>& out, std::size_t index, std::string_view what,
                std::string_view text, bool allow_empty) {
    if (!allow_empty && text.empty()) {
        out.push_back({index, std::string(what) + " is empty"});
        return;
    }
    if (!text.empty() && (is_space(text.front()) || is_space(text.back()))) {
        out.push_back({index, std::string(what) + " has surrounding whitespace"});
    }
    if (text.find_first_of("\r\n") != std::string_view::npos) {
        out.push_back({index, std::string(what) + " contains a line break"});
    }
}

} // namespace

Timestamp Timestamp::from_seconds(double seconds) {
    return Timestamp{static_cast<std::int64_t>(std::floor(seconds * 1000.0 + 1e-6))};
}

std::string format_timestamp(Timestamp t) {
    std::int64_t total = t.millis / 1000;
    std::int64_t hours = total / 3600;
    std::int64_t minutes = (total / 60) % 60;
    std::int64_t secs = total % 60;
    char buf[48];
    if (hours > 0) {
        std::snprintf(buf, sizeof(buf), "%02lld:%02lld:%02lld", static_cast<long long>(hours),
                      static_cast<long long>(minutes), static_cast<long long>(secs));
    } else {
        std::snprintf(buf, sizeof(buf), "%02lld:%02lld", static_cast<long long>(minutes),
                      static_cast<long long>(secs));
    }
    return buf;
}

std::optional<Timestamp> parse_timestamp(std::string_view text) {
    std::vector<std::string_view> parts;
    std::size_t begin = 0;
    for (std::size_t i = 0; i <= text.size(); ++i) {
        if (i == text.size() || text[i] == ':') {
            parts.push_back(text.substr(begin, i - begin));
            begin = i + 1;
        }
    }
    if (parts.size() < 2 || parts.size() > 3) {
        return std::nullopt;
    }
    std::string_view sec_part = parts.back();
    std::int64_t frac_millis = 0;
    if (auto dot = sec_part.find('.'); dot != std::string_view::npos) {
        auto frac = sec_part.substr(dot + 1);
        if (!all_digits(frac)) {
            return std::nullopt;
        }
        // Floor to millisecond resolution.
        std::int64_t scale = 100;
        for (std::size_t i = 0; i < frac.size() && i < 3; ++i) {
            frac_millis += (frac[i] - '0') * scale;
            scale /= 10;
        }
        sec_part = sec_part.substr(0, dot);
    }
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!all_digits(parts[i]) || parts[i].size() > 9) {
            return std::nullopt;
        }
    }
    if (!all_digits(sec_part) || sec_part.size() > 2) {
        return std::nullopt;
    }
    std::int64_t secs = to_int(sec_part);
    if (secs >= 60) {
        return std::nullopt;
    }
    std::int64_t total = 0;
    if (parts.size() == 3) {
        std::int64_t minutes = to_int(parts[1]);
        if (minutes >= 60) {
            return std::nullopt;
        }
        total = to_int(parts[0]) * 3600 + minutes * 60 + secs;
    } else {
        total = to_int(parts[0]) * 60 + secs;
    }
    return Timestamp{total * 1000 + frac_millis};
}

std::string escape_text(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    for (char c : raw) {
        if (kReserved.find(c) != std::string_view::npos) {
            out.push_back('\\');
        }
        out.push_back(c);
    }
    return out;
}

AudioDescription parse_description(std::string_view text) {
    AudioDescription d;
    std::size_t line_no = 0;
    std::size_t begin = 0;
    while (begin <= text.size()) {
        auto nl = text.find('\n', begin);
        auto end = nl == std::string_view::npos ? text.size() : nl;
        ++line_no;
        auto line = text.substr(begin, end - begin);
        if (!trim(line).empty()) {
            d.segments.push_back(parse_line(line, line_no));
        }
        if (nl == std::string_view::npos) {
            break;
        }
        begin = nl + 1;
    }
    if (d.segments.empty()) {
        throw Error(ErrorKind::EmptyDocument, "no segments", line_no == 0 ? 1 : line_no);
    }
    return d;
}

std::string serialize_segment(const Segment& s) {
    std::string out = "[" + format_timestamp(s.start) + "-" + format_timestamp(s.end) + "]";
    if (!s.content.empty()) {
        out += ' ';
        out += escape_text(s.content);
    }
    if (!s.attributes.empty()) {
        out += " (";
        for (std::size_t i = 0; i < s.attributes.size(); ++i) {
            if (i > 0) {
                out += ", ";
            }
            if (const auto* kv = std::get_if<KeyValue>(&s.attributes[i])) {
                out += escape_text(kv->name);
                out += ':';
                out += escape_text(kv->value);
            } else {
                out += escape_text(std::get<Bare>(s.attributes[i]).text);
            }
        }
        out += ')';
    }
    return out;
}

std::string serialize_description(const AudioDescription& d) {
    auto violations = validate_description(d);
    for (const auto& v : violations) {
        if (!v.warning) {
            std::string where = v.segment ? "segment " + std::to_string(*v.segment) + ": " : "";
            throw Error(ErrorKind::InvariantViolation, where + v.rule);
        }
    }
    std::string out;
    for (std::size_t i = 0; i < d.segments.size(); ++i) {
        if (i > 0) {
            out += '\n';
        }
        out += serialize_segment(d.segments[i]);
    }
    return out;
}

std::vector<Violation> validate_description(const AudioDescription& d) {
    std::vector<Violation> out;
    if (d.segments.empty()) {
        out.push_back({std::nullopt, "no segments"});
        return out;
    }
    for (std::size_t i = 0; i < d.segments.size(); ++i) {
        const Segment& s = d.segments[i];
        if (s.start.millis < 0 || s.end.millis < 0) {
            out.push_back({i, "negative timestamp"});
        }
        if (s.end < s.start) {
            out.push_back({i, "end before start"});
        }
        if (i > 0 && s.start < d.segments[i - 1].start) {
            out.push_back({i, "non-monotonic starts"});
        }
        if (s.start.has_fraction() || s.end.has_fraction()) {
            out.push_back({i, "sub-second timestamp floored", true});
        }
        check_text(out, i, "content", s.content, true);
        std::size_t bare_count = 0;
        for (const auto& entry : s.attributes) {
            if (const auto* kv = std::get_if<KeyValue>(&entry)) {
                check_text(out, i, "attribute name", kv->name, false);
                check_text(out, i, "attribute value", kv->value, true);
            } else {
                ++bare_count;
                check_text(out, i, "bare attribute", std::get<Bare>(entry).text, false);
            }
        }
        // Without a key:value entry the group reads back as one bare event.
        if (bare_count > 1 && bare_count == s.attributes.size()) {
            out.push_back({i, "multiple bare attributes without a key:value entry"});
        }
    }
    return out;
}

bool has_errors(const std::vector<Violation>& violations) {
    for (const auto& v : violations) {
        if (!v.warning) {
            return true;
        }
    }
    return false;
}

// ---------------------------------------------------------------------------

namespace {

using ojson = nlohmann::ordered_json;

[[noreturn]] void schema_error(const std::string& msg, std::size_t line_no) {
    throw Error(ErrorKind::SchemaViolation, msg,
                line_no == 0 ? std::nullopt : std::optional<std::size_t>(line_no));
}

std::string require_string(const ojson& obj, const char* key, std::size_t line_no) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_string()) {
        schema_error(std::string("field '") + key + "' must be a string", line_no);
    }
    return it->get<std::string>();
}

std::optional<std::string> optional_string(const ojson& obj, const char* key, std::size_t line_no) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) {
        return std::nullopt;
    }
    if (!it->is_string()) {
        schema_error(std::string("field '") + key + "' must be a string", line_no);
    }
    return it->get<std::string>();
}

std::optional<double> optional_number(const ojson& obj, const char* key, std::size_t line_no) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) {
        return std::nullopt;
    }
    if (!it->is_number()) {
        schema_error(std::string("field '") + key + "' must be a number", line_no);
    }
    return it->get<double>();
}

} // namespace

MetadataRecord parse_metadata_record(std::string_view json_line, std::size_t line_no) {
    ojson obj;
    try {
        obj = ojson::parse(json_line);
    } catch (const ojson::parse_error& e) {
        schema_error(std::string("invalid JSON: ") + e.what(), line_no);
    }
    if (!obj.is_object()) {
        schema_error("record must be an object", line_no);
    }
    MetadataRecord rec;
    rec.id = require_string(obj, "id", line_no);
    auto domain = require_string(obj, "domain", line_no);
    auto parsed = parse_domain(domain);
    if (!parsed) {
        throw Error(ErrorKind::UnknownDomain, "'" + domain + "'", line_no);
    }
    rec.domain = *parsed;
    rec.audio_path = require_string(obj, "audio_path", line_no);
    rec.transcript = optional_string(obj, "transcript", line_no);

    auto segs = obj.find("segments");
    if (segs == obj.end() || !segs->is_array()) {
        schema_error("field 'segments' must be an array", line_no);
    }
    for (const auto& s : *segs) {
        if (!s.is_object()) {
            schema_error("segment must be an object", line_no);
        }
        SegmentRecord sr;
        sr.start_s = optional_number(s, "start_s", line_no);
        sr.end_s = optional_number(s, "end_s", line_no);
        sr.content = optional_string(s, "content", line_no);
        sr.event = optional_string(s, "event", line_no);
        if (auto attrs = s.find("attributes"); attrs != s.end() && !attrs->is_null()) {
            if (!attrs->is_object()) {
                schema_error("field 'attributes' must be an object", line_no);
            }
            for (const auto& [key, value] : attrs->items()) {
                if (!value.is_string()) {
                    schema_error("attribute '" + key + "' must be a string", line_no);
                }
                sr.attributes.emplace_back(key, value.get<std::string>());
            }
        }
        rec.segments.push_back(std::move(sr));
    }
    return rec;
}

std::string metadata_record_to_json(const MetadataRecord& record) {
    ojson obj;
    obj["id"] = record.id;
    obj["domain"] = std::string(to_string(record.domain));
    obj["audio_path"] = record.audio_path;
    ojson segs = ojson::array();
    for (const auto& s : record.segments) {
        ojson js = ojson::object();
        if (s.start_s) js["start_s"] = *s.start_s;
        if (s.end_s) js["end_s"] = *s.end_s;
        if (s.content) js["content"] = *s.content;
        if (!s.attributes.empty()) {
            ojson attrs = ojson::object();
            for (const auto& [k, v] : s.attributes) {
                attrs[k] = v;
            }
            js["attributes"] = std::move(attrs);
        }
        if (s.event) js["event"] = *s.event;
        segs.push_back(std::move(js));
    }
    obj["segments"] = std::move(segs);
    if (record.transcript) {
        obj["transcript"] = *record.transcript;
    }
    return obj.dump();
}

std::vector<MetadataRecord> load_metadata(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::Io, "cannot open " + path.string());
    }
    std::vector<MetadataRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        out.push_back(parse_metadata_record(line, line_no));
    }
    return out;
}

AudioDescription build_description(const MetadataRecord& record) {
    AudioDescription d;
    for (std::size_t i = 0; i < record.segments.size(); ++i) {
        const auto& sr = record.segments[i];
        if (!sr.start_s || !sr.end_s) {
            throw Error(ErrorKind::MissingSpan,
                        "record '" + record.id + "' segment " + std::to_string(i) + " lacks start_s/end_s");
        }
        Segment seg;
        seg.start = Timestamp::from_seconds(*sr.start_s);
        seg.end = Timestamp::from_seconds(*sr.end_s);
        seg.content = sr.content ? std::string(trim(*sr.content)) : std::string();
        for (const auto& [name, value] : sr.attributes) {
            seg.attributes.emplace_back(KeyValue{std::string(trim(name)), std::string(trim(value))});
        }
        if (sr.event) {
            seg.attributes.emplace_back(Bare{std::string(trim(*sr.event))});
        }
        d.segments.push_back(std::move(seg));
    }
    return d;
}

} // namespace desta::description
