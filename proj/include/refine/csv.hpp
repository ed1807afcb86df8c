#pragma once

// RFC-4180 reading and writing, plus the number formatting used by every
// text artifact the library emits.

#include <array>
#include <charconv>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "refine/error.hpp"

namespace refine::csv {

using Record = std::vector<std::string>;

/// Split CSV text into records. Handles quoted fields, doubled quotes,
/// embedded separators/newlines and CRLF line endings. Blank lines are
/// skipped. Errors carry the record index (0 is the header).
inline std::vector<Record> read(std::string_view text) {
    std::vector<Record> records;
    Record record;
    std::string field;
    bool in_quotes = false;
    bool after_quote = false;
    bool field_started = false;

    auto end_field = [&] {
        record.push_back(std::move(field));
        field.clear();
        after_quote = false;
        field_started = false;
    };
    auto end_record = [&] {
        const bool blank = record.empty() && field.empty() && !field_started;
        if (!blank) {
            end_field();
            records.push_back(std::move(record));
        }
        record.clear();
        field.clear();
        field_started = false;
        after_quote = false;
    };

    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                    after_quote = true;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
            case ',':
                end_field();
                field_started = true;
                break;
            case '\r':
                if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
                end_record();
                break;
            case '\n':
                end_record();
                break;
            case '"':
                if (!field.empty() || after_quote) {
                    throw CsvError(records.size(), "unexpected quote inside unquoted field");
                }
                in_quotes = true;
                field_started = true;
                break;
            default:
                if (after_quote) {
                    throw CsvError(records.size(), "characters after closing quote");
                }
                field.push_back(c);
                field_started = true;
        }
    }
    if (in_quotes) throw CsvError(records.size(), "unterminated quoted field");
    end_record();
    return records;
}

inline bool needs_quotes(std::string_view field) {
    if (field.empty()) return false;
    if (field.front() == ' ' || field.back() == ' ') return true;
    return field.find_first_of(",\"\r\n") != std::string_view::npos;
}

inline void append_field(std::string& out, std::string_view field) {
    if (!needs_quotes(field)) {
        out.append(field);
        return;
    }
    out.push_back('"');
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
}

inline void append_record(std::string& out, const Record& record) {
    for (std::size_t i = 0; i < record.size(); ++i) {
        if (i) out.push_back(',');
        append_field(out, record[i]);
    }
    out.push_back('\n');
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

/// Parse a finite decimal number; surrounding blanks and a leading '+' are allowed.
inline std::optional<double> parse_number(std::string_view text) {
    text = trim(text);
    if (!text.empty() && text.front() == '+') text.remove_prefix(1);
    if (text.empty()) return std::nullopt;
    double value = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(value)) {
        return std::nullopt;
    }
    return value;
}

/// Shortest text that parses back to exactly `value`.
inline std::string format_number(double value) {
    if (value == 0) value = 0;  // drop negative zero
    std::array<char, 64> buf{};
    const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    return std::string(buf.data(), ptr);
}

}  // namespace refine::csv
