// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "desta/domain.hpp"

// Structured textual description of an audio clip. One segment per line:
//
//   [MM:SS-MM:SS] spoken content (Name:Value, Name:Value)
//   [MM:SS-MM:SS] (free-form sound event)
//
// The last top-level parenthesized group on a line is the attribute block;
// everything between "]" and that group is content. A group with no unescaped
// ":" is a single bare event description, otherwise a comma-separated list.
// Backslash escapes "\", "(", ")", "," and ":" inside content and values.
namespace desta::description {

/// Point in time inside a clip, stored with millisecond resolution. The
/// canonical text form carries whole seconds only (MM:SS, or HH:MM:SS from one
/// hour on); fractional parts are floored when serializing.
struct Timestamp {
    std::int64_t millis = 0;

    static Timestamp from_seconds(double seconds);
    static constexpr Timestamp whole(std::int64_t seconds) { return Timestamp{seconds * 1000}; }

    std::int64_t whole_seconds() const { return millis / 1000; }
    bool has_fraction() const { return millis % 1000 != 0; }
    double seconds() const { return static_cast<double>(millis) / 1000.0; }

    auto operator<=>(const Timestamp&) const = default;
};

std::string format_timestamp(Timestamp t);

/// Parses `MM:SS`, `HH:MM:SS`, optionally with a fractional seconds part.
std::optional<Timestamp> parse_timestamp(std::string_view text);

struct KeyValue {
    std::string name;
    std::string value;
    bool operator==(const KeyValue&) const = default;
};

struct Bare {
    std::string text;
    bool operator==(const Bare&) const = default;
};

using AttributeEntry = std::variant<KeyValue, Bare>;

struct Segment {
    Timestamp start;
    Timestamp end;
    std::string content;
    std::vector<AttributeEntry> attributes;
    bool operator==(const Segment&) const = default;
};

struct AudioDescription {
    std::vector<Segment> segments;
    bool operator==(const AudioDescription&) const = default;
};

struct Violation {
    std::optional<std::size_t> segment;
    std::string rule;
    bool warning = false;
    bool operator==(const Violation&) const = default;
};

/// Throws desta::Error (MalformedTimestamp, UnbalancedParentheses,
/// MalformedAttribute, EmptyDocument) carrying the 1-based line number.
/// Blank lines are skipped.
AudioDescription parse_description(std::string_view text);

/// Canonical form, segments joined by "\n" without a trailing newline.
/// Throws Error(InvariantViolation) if validation reports an error.
std::string serialize_description(const AudioDescription& d);

std::string serialize_segment(const Segment& s);

/// Empty iff every invariant holds. Warnings (sub-second timestamps) are
/// included but flagged; they do not make a description invalid.
std::vector<Violation> validate_description(const AudioDescription& d);

bool has_errors(const std::vector<Violation>& violations);

std::string escape_text(std::string_view raw);

// ---------------------------------------------------------------------------
// Normalized metadata interchange (one JSON object per line).

struct SegmentRecord {
    std::optional<double> start_s;
    std::optional<double> end_s;
    std::optional<std::string> content;
    std::vector<std::pair<std::string, std::string>> attributes; // declared key order
    std::optional<std::string> event;
};

struct MetadataRecord {
    std::string id;
    Domain domain = Domain::Speech;
    std::string audio_path;
    std::vector<SegmentRecord> segments;
    std::optional<std::string> transcript;
};

/// Throws Error(SchemaViolation | UnknownDomain) tagged with `line_no`.
MetadataRecord parse_metadata_record(std::string_view json_line, std::size_t line_no = 0);

std::string metadata_record_to_json(const MetadataRecord& record);

/// Reads a whole interchange file; blank lines are skipped.
std::vector<MetadataRecord> load_metadata(const std::filesystem::path& path);

/// Deterministic mapping from a metadata record to a description: attribute
/// entries keep the record's key order, an `event` becomes a trailing bare
/// entry. Throws Error(MissingSpan) if a segment lacks start_s or end_s.
AudioDescription build_description(const MetadataRecord& record);

} // namespace desta::description
