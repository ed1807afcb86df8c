#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace refine {

enum class Op { lt, le, gt, ge, eq };

inline std::string_view op_text(Op op) {
    switch (op) {
        case Op::lt: return "<";
        case Op::le: return "<=";
        case Op::gt: return ">";
        case Op::ge: return ">=";
        case Op::eq: return "=";
    }
    return "?";
}

inline std::optional<Op> parse_op(std::string_view s) {
    if (s == "<") return Op::lt;
    if (s == "<=" || s == "\xE2\x89\xA4") return Op::le;  // also accepts U+2264
    if (s == ">") return Op::gt;
    if (s == ">=" || s == "\xE2\x89\xA5") return Op::ge;  // U+2265
    if (s == "=" || s == "==") return Op::eq;
    return std::nullopt;
}

inline bool is_lower(Op op) { return op == Op::gt || op == Op::ge; }
inline bool is_upper(Op op) { return op == Op::lt || op == Op::le; }

inline bool holds(double x, Op op, double v) {
    switch (op) {
        case Op::lt: return x < v;
        case Op::le: return x <= v;
        case Op::gt: return x > v;
        case Op::ge: return x >= v;
        case Op::eq: return x == v;
    }
    return false;
}

/// A target interval for regression rules: the first interval of a binning
/// is closed [lo, hi], the following ones are (lo, hi].
struct Interval {
    double lo = 0;
    double hi = 0;

    bool operator==(const Interval&) const = default;
    bool contains(double y) const { return y >= lo && y <= hi; }
};

/// Index of the interval a value falls in; out-of-range values clamp to the ends.
inline std::size_t interval_index(const std::vector<Interval>& intervals, double y) {
    for (std::size_t i = 0; i < intervals.size(); ++i) {
        if (y <= intervals[i].hi) return i;
    }
    return intervals.empty() ? 0 : intervals.size() - 1;
}

}  // namespace refine
