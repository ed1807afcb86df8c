#pragma once

// Conjunctive if-then rules: merging tree paths into one rule per target,
// majority aggregation across independent runs, and the canonical text form
//
//     If [Target]=t, Then f1 op v1 and f2 op v2 ...
//
// that is embedded in generation prompts.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"

#include "refine/dataset.hpp"
#include "refine/forest.hpp"
#include "refine/predicate.hpp"

namespace refine {

/// A class label, or an interval of the target for regression rules.
using RuleTarget = std::variant<std::string, Interval>;

struct Condition {
    std::string feature;
    Op op = Op::le;
    std::variant<double, std::string> value;
    std::size_t source_support = 0;

    bool operator==(const Condition&) const = default;

    bool numeric() const { return std::holds_alternative<double>(value); }
    double bound() const { return std::get<double>(value); }
};

struct Rule {
    RuleTarget target;
    std::vector<Condition> conditions;

    bool operator==(const Rule&) const = default;
};

enum class RuleProvenance { deterministic, llm };

struct RuleSet {
    std::vector<Rule> rules;
    RuleProvenance provenance = RuleProvenance::deterministic;
    std::size_t runs_aggregated = 1;

    bool operator==(const RuleSet&) const = default;

    const Rule* find(const RuleTarget& t) const {
        for (const auto& r : rules) {
            if (r.target == t) return &r;
        }
        return nullptr;
    }
};

/// Paths sharing one target, as collected from the top trees of one run.
struct TargetPaths {
    RuleTarget target;
    std::vector<RawPath> paths;
};

// --- formatting ---------------------------------------------------------------

/// Four significant digits, trailing zeros kept ("2.000", "86.50", "1235").
inline std::string format_sig4(double v) {
    if (v == 0) v = 0;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%#.4g", v);
    std::string s(buf);
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
}

inline double round_sig4(double v) { return *csv::parse_number(format_sig4(v)); }

inline std::string target_text(const RuleTarget& t) {
    if (const auto* label = std::get_if<std::string>(&t)) return "[Target]=" + *label;
    const auto& iv = std::get<Interval>(t);
    return "[Target] in [" + format_sig4(iv.lo) + ", " + format_sig4(iv.hi) + "]";
}

inline std::string condition_text(const Condition& c) {
    std::string out = c.feature;
    out += ' ';
    out += op_text(c.op);
    out += ' ';
    out += c.numeric() ? format_sig4(c.bound()) : std::get<std::string>(c.value);
    return out;
}

namespace detail {

inline int side_rank(Op op) { return is_lower(op) ? 0 : is_upper(op) ? 1 : 2; }

/// Schema column order, lower bound before upper bound before equality.
inline void sort_conditions(std::vector<Condition>& conds, const Schema& schema) {
    auto col = [&](const Condition& c) {
        const auto i = schema.find(c.feature);
        return i ? *i : schema.columns.size();
    };
    std::stable_sort(conds.begin(), conds.end(), [&](const Condition& a, const Condition& b) {
        const auto ca = col(a), cb = col(b);
        if (ca != cb) return ca < cb;
        return side_rank(a.op) < side_rank(b.op);
    });
}

}  // namespace detail

inline std::string render_rule(const Rule& rule, const Schema& schema) {
    auto conds = rule.conditions;
    detail::sort_conditions(conds, schema);
    std::string out = "If " + target_text(rule.target) + ", Then ";
    if (conds.empty()) return out + "(no constraints)";
    for (std::size_t i = 0; i < conds.size(); ++i) {
        if (i) out += " and ";
        out += condition_text(conds[i]);
    }
    return out;
}

/// Numeric bounds rounded to the printed precision, so a rule equals its text.
inline RuleSet round_rules(RuleSet rs) {
    for (auto& r : rs.rules) {
        for (auto& c : r.conditions) {
            if (c.numeric()) c.value = round_sig4(c.bound());
        }
    }
    return rs;
}

inline std::string render_rules(const RuleSet& rs, const Schema& schema) {
    std::string out;
    for (const auto& r : rs.rules) out += render_rule(r, schema) + "\n";
    return out;
}

/// Plain-language rendering, used only by the natural-language prompt variant.
inline std::string render_rule_natural(const Rule& rule, const Schema& schema) {
    auto conds = rule.conditions;
    detail::sort_conditions(conds, schema);
    std::string out;
    if (const auto* label = std::get_if<std::string>(&rule.target)) {
        out = "Records whose " + schema.target_name() + " is " + *label;
    } else {
        const auto& iv = std::get<Interval>(rule.target);
        out = "Records whose " + schema.target_name() + " is between " + format_sig4(iv.lo) + " and " +
              format_sig4(iv.hi);
    }
    if (conds.empty()) return out + " have no particular feature pattern.";
    out += " typically have ";
    for (std::size_t i = 0; i < conds.size(); ++i) {
        if (i) out += i + 1 == conds.size() ? ", and " : ", ";
        const auto& c = conds[i];
        const std::string v = c.numeric() ? format_sig4(c.bound()) : std::get<std::string>(c.value);
        switch (c.op) {
            case Op::lt: out += c.feature + " below " + v; break;
            case Op::le: out += c.feature + " at most " + v; break;
            case Op::gt: out += c.feature + " above " + v; break;
            case Op::ge: out += c.feature + " at least " + v; break;
            case Op::eq: out += c.feature + " equal to " + v; break;
        }
    }
    return out + ".";
}

// --- evaluation ---------------------------------------------------------------

inline bool satisfies(const Row& row, const Rule& rule, const Schema& schema) {
    for (const auto& c : rule.conditions) {
        const auto col = schema.find(c.feature);
        if (!col) return false;
        const auto& cell = row.at(*col);
        if (c.numeric()) {
            const auto* x = std::get_if<double>(&cell);
            if (!x || !holds(*x, c.op, c.bound())) return false;
        } else {
            const auto* x = std::get_if<std::string>(&cell);
            if (!x || *x != std::get<std::string>(c.value)) return false;
        }
    }
    return true;
}

/// Numeric bounds of a rule on one feature (infinite when absent).
struct FeatureBox {
    double lo = -std::numeric_limits<double>::infinity();
    bool lo_strict = false;
    double hi = std::numeric_limits<double>::infinity();
    bool hi_strict = false;

    bool empty() const { return lo > hi || (lo == hi && (lo_strict || hi_strict)); }
};

inline FeatureBox feature_box(const Rule& rule, std::string_view feature) {
    FeatureBox b;
    for (const auto& c : rule.conditions) {
        if (c.feature != feature || !c.numeric()) continue;
        if (is_lower(c.op) && (c.bound() > b.lo || (c.bound() == b.lo && c.op == Op::gt))) {
            b.lo = c.bound();
            b.lo_strict = c.op == Op::gt;
        } else if (is_upper(c.op) && (c.bound() < b.hi || (c.bound() == b.hi && c.op == Op::lt))) {
            b.hi = c.bound();
            b.hi_strict = c.op == Op::lt;
        }
    }
    return b;
}

inline bool boxes_disjoint(const FeatureBox& a, const FeatureBox& b) {
    const double lo = std::max(a.lo, b.lo), hi = std::min(a.hi, b.hi);
    if (lo < hi) return false;
    if (lo > hi) return true;
    // Touching at a single point: disjoint unless both include it.
    const bool a_has = (a.lo < lo || (a.lo == lo && !a.lo_strict)) && (a.hi > lo || (a.hi == lo && !a.hi_strict));
    const bool b_has = (b.lo < lo || (b.lo == lo && !b.lo_strict)) && (b.hi > lo || (b.hi == lo && !b.hi_strict));
    return !(a_has && b_has);
}

// --- canonical per-feature representation --------------------------------------

namespace detail {

struct Bound {
    double value = 0;
    Op op = Op::le;
    std::size_t support = 0;
};

struct FeatureConstraint {
    std::optional<Bound> lower;
    std::optional<Bound> upper;
    std::optional<std::string> category;
    std::size_t category_support = 0;
};

using ConstraintMap = std::map<std::size_t, FeatureConstraint>;  // schema column -> constraint

inline bool contradictory(const FeatureConstraint& fc) {
    if (!fc.lower || !fc.upper) return false;
    const auto& l = *fc.lower;
    const auto& u = *fc.upper;
    return l.value > u.value || (l.value == u.value && (l.op == Op::gt || u.op == Op::lt));
}

/// Resolve an empty interval by dropping the less supported side.
inline void make_satisfiable(FeatureConstraint& fc) {
    if (!contradictory(fc)) return;
    if (fc.lower->support >= fc.upper->support) {
        fc.upper.reset();
    } else {
        fc.lower.reset();
    }
}

inline std::vector<Condition> to_conditions(const ConstraintMap& cm, const Schema& schema) {
    std::vector<Condition> out;
    for (const auto& [col, fc] : cm) {
        const auto& name = schema.columns[col].name;
        if (fc.lower) out.push_back({name, fc.lower->op, fc.lower->value, fc.lower->support});
        if (fc.upper) out.push_back({name, fc.upper->op, fc.upper->value, fc.upper->support});
        if (fc.category) out.push_back({name, Op::eq, *fc.category, fc.category_support});
    }
    return out;
}

inline ConstraintMap from_conditions(const std::vector<Condition>& conds, const Schema& schema) {
    ConstraintMap cm;
    for (const auto& c : conds) {
        const auto col = schema.find(c.feature);
        if (!col) continue;
        auto& fc = cm[*col];
        if (c.op == Op::eq) {
            fc.category = std::get<std::string>(c.value);
            fc.category_support = c.source_support;
        } else if (is_lower(c.op)) {
            fc.lower = Bound{c.bound(), c.op, c.source_support};
        } else {
            fc.upper = Bound{c.bound(), c.op, c.source_support};
        }
    }
    return cm;
}

/// Split overlapping numeric intervals of two targets at the overlap midpoint.
/// Open ends are closed at the observed column range first. The target whose
/// interval centre is lower keeps the lower part.
inline void separate_pair(FeatureConstraint& a, FeatureConstraint& b, double col_min, double col_max) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    auto box = [](const FeatureConstraint& fc) {
        FeatureBox x;
        if (fc.lower) {
            x.lo = fc.lower->value;
            x.lo_strict = fc.lower->op == Op::gt;
        }
        if (fc.upper) {
            x.hi = fc.upper->value;
            x.hi_strict = fc.upper->op == Op::lt;
        }
        return x;
    };
    const FeatureBox ba = box(a), bb = box(b);
    if (boxes_disjoint(ba, bb)) return;

    double lo = std::max(ba.lo, bb.lo), hi = std::min(ba.hi, bb.hi);
    if (lo == -inf) lo = std::min(col_min, hi);
    if (hi == inf) hi = std::max(col_max, lo);
    const double cut = lo + (hi - lo) / 2;

    auto centre = [&](const FeatureBox& x) {
        const double l = x.lo == -inf ? std::min(col_min, x.hi) : x.lo;
        const double h = x.hi == inf ? std::max(col_max, x.lo) : x.hi;
        return l + (h - l) / 2;
    };
    const double ca = centre(ba), cb = centre(bb);
    const bool a_lower = ca < cb || (ca == cb && (ba.lo < bb.lo || (ba.lo == bb.lo && ba.hi <= bb.hi)));
    FeatureConstraint& low = a_lower ? a : b;
    FeatureConstraint& high = a_lower ? b : a;
    const std::size_t low_support = low.upper ? low.upper->support : low.lower ? low.lower->support : 0;
    const std::size_t high_support = high.lower ? high.lower->support : high.upper ? high.upper->support : 0;
    low.upper = Bound{cut, Op::le, low_support};
    high.lower = Bound{cut, Op::gt, high_support};
    // A degenerate cut can still empty one side; the bound it had wins then.
    make_satisfiable(low);
    make_satisfiable(high);
}

inline void separate_targets(std::vector<ConstraintMap>& per_target, const Schema& schema,
                             const ColumnStats* stats) {
    for (std::size_t col = 0; col < schema.columns.size(); ++col) {
        if (col == schema.target || schema.columns[col].kind != ColumnKind::numeric) continue;
        double cmin = 0, cmax = 0;
        if (stats && stats->numeric.at(col)) {
            cmin = stats->numeric[col]->min;
            cmax = stats->numeric[col]->max;
        }
        for (std::size_t a = 0; a < per_target.size(); ++a) {
            for (std::size_t b = a + 1; b < per_target.size(); ++b) {
                auto ia = per_target[a].find(col), ib = per_target[b].find(col);
                if (ia == per_target[a].end() || ib == per_target[b].end()) continue;
                auto& fa = ia->second;
                auto& fb = ib->second;
                if (!(fa.lower || fa.upper) || !(fb.lower || fb.upper)) continue;
                if (!stats) {
                    // Without a column range, close open ends at the other interval's finite bounds.
                    std::vector<double> finite;
                    for (auto* fc : {&fa, &fb}) {
                        if (fc->lower) finite.push_back(fc->lower->value);
                        if (fc->upper) finite.push_back(fc->upper->value);
                    }
                    cmin = *std::min_element(finite.begin(), finite.end());
                    cmax = *std::max_element(finite.begin(), finite.end());
                    if (cmin == cmax) cmax = cmin + 1;
                }
                separate_pair(fa, fb, cmin, cmax);
            }
        }
    }
}

}  // namespace detail

// --- merging ----------------------------------------------------------------------

/// Deterministic merge of per-target decision paths into one rule per target.
///
/// For each target and feature, lower bounds are averaged weighted by leaf
/// support, likewise upper bounds; a categorical feature keeps its best
/// supported category. Overlapping intervals of different targets on the same
/// feature are then split at the overlap midpoint. `stats` (of the training
/// data) supplies column ranges for intervals that are open on one side.
inline RuleSet merge_deterministic(const std::vector<TargetPaths>& groups, const Schema& schema,
                                   const ColumnStats* stats = nullptr) {
    if (groups.empty()) throw InputError("nothing to merge: no paths");
    std::vector<detail::ConstraintMap> per_target;
    for (const auto& g : groups) {
        if (g.paths.empty()) throw InputError("target " + target_text(g.target) + " has no paths");
        struct Acc {
            double lo_sum = 0, lo_w = 0, hi_sum = 0, hi_w = 0;
            std::size_t lo_n = 0, hi_n = 0;
            bool lo_all_ge = true, hi_all_lt = true;
            std::map<std::string, std::size_t> cats;
        };
        std::map<std::size_t, Acc> acc;
        for (const auto& p : g.paths) {
            const double w = static_cast<double>(std::max<std::size_t>(p.support, 1));
            for (const auto& pred : p.predicates) {
                auto& a = acc[pred.column];
                if (pred.op == Op::eq) {
                    a.cats[pred.category] += std::max<std::size_t>(p.support, 1);
                } else if (is_lower(pred.op)) {
                    a.lo_sum += w * pred.value;
                    a.lo_w += w;
                    ++a.lo_n;
                    a.lo_all_ge = a.lo_all_ge && pred.op == Op::ge;
                } else {
                    a.hi_sum += w * pred.value;
                    a.hi_w += w;
                    ++a.hi_n;
                    a.hi_all_lt = a.hi_all_lt && pred.op == Op::lt;
                }
            }
        }
        detail::ConstraintMap cm;
        for (const auto& [col, a] : acc) {
            detail::FeatureConstraint fc;
            if (a.lo_n) {
                fc.lower = detail::Bound{a.lo_sum / a.lo_w, a.lo_all_ge ? Op::ge : Op::gt,
                                         static_cast<std::size_t>(a.lo_w)};
            }
            if (a.hi_n) {
                fc.upper = detail::Bound{a.hi_sum / a.hi_w, a.hi_all_lt ? Op::lt : Op::le,
                                         static_cast<std::size_t>(a.hi_w)};
            }
            if (!a.cats.empty()) {
                const auto& cats = schema.columns[col].categories;
                auto order = [&](const std::string& c) {
                    const auto it = std::find(cats.begin(), cats.end(), c);
                    return static_cast<std::size_t>(it - cats.begin());
                };
                const std::string* best = nullptr;
                std::size_t best_w = 0;
                for (const auto& [cat, w] : a.cats) {
                    if (!best || w > best_w || (w == best_w && order(cat) < order(*best))) {
                        best = &cat;
                        best_w = w;
                    }
                }
                fc.category = *best;
                fc.category_support = best_w;
            }
            detail::make_satisfiable(fc);
            cm[col] = std::move(fc);
        }
        per_target.push_back(std::move(cm));
    }
    detail::separate_targets(per_target, schema, stats);

    RuleSet out;
    out.provenance = RuleProvenance::deterministic;
    out.runs_aggregated = 1;
    for (std::size_t t = 0; t < groups.size(); ++t) {
        out.rules.push_back({groups[t].target, detail::to_conditions(per_target[t], schema)});
    }
    return out;
}

// --- aggregation ------------------------------------------------------------------

/// Self-consistency aggregation over `g` runs. A condition is identified by
/// (target, feature, side) for bounds and (target, feature) for categories;
/// it survives when present in at least ceil(g/2) runs. Surviving bounds are
/// the unweighted mean over the runs that have them; a category survives only
/// when one value alone reaches the majority.
inline RuleSet aggregate(const std::vector<RuleSet>& runs, std::size_t g, const Schema& schema) {
    if (g < 1 || runs.size() != g) {
        throw InputError("aggregate expects " + std::to_string(g) + " runs, got " + std::to_string(runs.size()));
    }
    const auto& first = runs.front();
    for (const auto& r : runs) {
        if (r.rules.size() != first.rules.size()) throw InputError("runs disagree on target sets");
        for (const auto& rule : first.rules) {
            if (!r.find(rule.target)) throw InputError("runs disagree on target sets");
        }
    }
    const std::size_t need = (g + 1) / 2;

    RuleSet out;
    out.provenance = first.provenance;
    for (const auto& r : runs) {
        if (r.provenance == RuleProvenance::llm) out.provenance = RuleProvenance::llm;
    }
    out.runs_aggregated = g;

    for (const auto& base : first.rules) {
        struct Side {
            std::size_t count = 0;
            double first = 0;
            double offset = 0;  ///< sum of (value - first), exact when all values agree
            std::size_t support = 0;
            std::map<Op, std::size_t> ops;
        };
        struct Acc {
            Side lower, upper;
            std::map<std::string, std::pair<std::size_t, std::size_t>> cats;  // count, summed support
        };
        std::map<std::size_t, Acc> acc;
        for (const auto& run : runs) {
            const auto cm = detail::from_conditions(run.find(base.target)->conditions, schema);
            for (const auto& [col, fc] : cm) {
                auto& a = acc[col];
                auto fold = [](Side& s, const detail::Bound& b) {
                    if (s.count++ == 0) s.first = b.value;
                    s.offset += b.value - s.first;
                    s.support += b.support;
                    ++s.ops[b.op];
                };
                if (fc.lower) fold(a.lower, *fc.lower);
                if (fc.upper) fold(a.upper, *fc.upper);
                if (fc.category) {
                    auto& c = a.cats[*fc.category];
                    ++c.first;
                    c.second += fc.category_support;
                }
            }
        }
        detail::ConstraintMap cm;
        for (const auto& [col, a] : acc) {
            detail::FeatureConstraint fc;
            auto settle = [&](const Side& s) -> std::optional<detail::Bound> {
                if (s.count < need) return std::nullopt;
                Op op = s.ops.begin()->first;
                std::size_t best = 0;
                for (const auto& [o, n] : s.ops) {
                    if (n > best) {
                        best = n;
                        op = o;
                    }
                }
                const auto n = static_cast<double>(s.count);
                return detail::Bound{s.first + s.offset / n, op, s.support / s.count};
            };
            fc.lower = settle(a.lower);
            fc.upper = settle(a.upper);
            if (fc.lower && fc.upper && detail::contradictory(fc)) {
                // Keep the side seen in more runs.
                if (a.lower.count >= a.upper.count) {
                    fc.upper.reset();
                } else {
                    fc.lower.reset();
                }
            }
            const auto& cats = schema.columns[col].categories;
            auto order = [&](const std::string& c) {
                return static_cast<std::size_t>(std::find(cats.begin(), cats.end(), c) - cats.begin());
            };
            for (const auto& [cat, cs] : a.cats) {
                if (cs.first < need) continue;
                if (!fc.category || cs.first > a.cats.at(*fc.category).first ||
                    (cs.first == a.cats.at(*fc.category).first && order(cat) < order(*fc.category))) {
                    fc.category = cat;
                    fc.category_support = cs.second / cs.first;
                }
            }
            if (fc.lower || fc.upper || fc.category) cm[col] = std::move(fc);
        }
        out.rules.push_back({base.target, detail::to_conditions(cm, schema)});
    }
    return out;
}

// --- parsing ----------------------------------------------------------------------

struct RuleParseResult {
    std::optional<Rule> rule;
    std::vector<std::string> warnings;
};

namespace detail {

inline std::string lower_ascii(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

/// Split on the word "and" (case-insensitive, surrounded by blanks).
inline std::vector<std::string> split_and(std::string_view text) {
    std::vector<std::string> parts;
    const std::string low = lower_ascii(text);
    std::size_t start = 0;
    for (;;) {
        const auto pos = low.find(" and ", start);
        if (pos == std::string::npos) {
            parts.emplace_back(csv::trim(text.substr(start)));
            break;
        }
        parts.emplace_back(csv::trim(text.substr(start, pos - start)));
        start = pos + 5;
    }
    return parts;
}

struct RawCondition {
    std::string feature;
    std::string op;
    std::string value;
};

inline std::optional<RawCondition> split_condition(std::string_view text) {
    static const std::vector<std::string_view> ops = {"<=", ">=", "!=", "==", "\xE2\x89\xA4", "\xE2\x89\xA5",
                                                      "<",  ">",  "="};
    std::size_t best = std::string_view::npos;
    std::string_view best_op;
    for (auto op : ops) {
        const auto pos = text.find(op);
        if (pos != std::string_view::npos && (pos < best || (pos == best && op.size() > best_op.size()))) {
            best = pos;
            best_op = op;
        }
    }
    if (best == std::string_view::npos) return std::nullopt;
    RawCondition rc;
    rc.feature = std::string(csv::trim(text.substr(0, best)));
    rc.op = std::string(best_op);
    std::string value(csv::trim(text.substr(best + best_op.size())));
    if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') && value.back() == value.front()) {
        value = value.substr(1, value.size() - 2);
    }
    rc.value = std::move(value);
    if (rc.feature.empty() || rc.value.empty()) return std::nullopt;
    return rc;
}

inline std::optional<Condition> check_condition(const RawCondition& rc, const Schema& schema,
                                                std::vector<std::string>& warnings) {
    const auto col = schema.find(rc.feature);
    if (!col || *col == schema.target) {
        warnings.push_back("unknown feature '" + rc.feature + "'");
        return std::nullopt;
    }
    const auto op = parse_op(rc.op);
    if (!op) {
        warnings.push_back("unsupported operator '" + rc.op + "' on '" + rc.feature + "'");
        return std::nullopt;
    }
    const auto& column = schema.columns[*col];
    if (column.kind == ColumnKind::numeric) {
        if (*op == Op::eq) {
            warnings.push_back("equality on numeric feature '" + rc.feature + "'");
            return std::nullopt;
        }
        const auto v = csv::parse_number(rc.value);
        if (!v) {
            warnings.push_back("non-numeric bound '" + rc.value + "' on '" + rc.feature + "'");
            return std::nullopt;
        }
        return Condition{column.name, *op, *v, 0};
    }
    if (*op != Op::eq) {
        warnings.push_back("ordering operator on categorical feature '" + rc.feature + "'");
        return std::nullopt;
    }
    if (!column.open && std::find(column.categories.begin(), column.categories.end(), rc.value) ==
                            column.categories.end()) {
        warnings.push_back("unknown category '" + rc.value + "' for '" + rc.feature + "'");
        return std::nullopt;
    }
    return Condition{column.name, Op::eq, rc.value, 0};
}

/// Keep the tightest bound per side and one category per feature; drop
/// features whose bounds contradict.
inline std::vector<Condition> canonicalize(const std::vector<Condition>& conds, const Schema& schema,
                                           std::vector<std::string>& warnings) {
    std::map<std::size_t, FeatureConstraint> cm;
    for (const auto& c : conds) {
        const auto col = *schema.find(c.feature);
        auto& fc = cm[col];
        if (c.op == Op::eq) {
            if (fc.category && *fc.category != std::get<std::string>(c.value)) {
                warnings.push_back("conflicting categories for '" + c.feature + "'");
            }
            if (!fc.category) fc.category = std::get<std::string>(c.value);
            continue;
        }
        Bound b{c.bound(), c.op, c.source_support};
        if (is_lower(c.op)) {
            if (!fc.lower || b.value > fc.lower->value || (b.value == fc.lower->value && b.op == Op::gt)) {
                fc.lower = b;
            }
        } else if (!fc.upper || b.value < fc.upper->value || (b.value == fc.upper->value && b.op == Op::lt)) {
            fc.upper = b;
        }
    }
    for (auto& [col, fc] : cm) {
        if (contradictory(fc)) {
            warnings.push_back("contradictory bounds on '" + schema.columns[col].name + "' dropped");
            fc.lower.reset();
            fc.upper.reset();
        }
    }
    return to_conditions(cm, schema);
}

inline std::optional<RuleTarget> parse_target(std::string_view text, const Schema& schema,
                                              std::vector<std::string>& warnings) {
    static const std::regex label_re(R"(^\s*\[[^\]]*\]\s*(?:==|=)\s*(.+?)\s*$)");
    static const std::regex interval_re(R"(^\s*\[[^\]]*\]\s+in\s+[\[\(]\s*([^,]+?)\s*,\s*([^\]\)]+?)\s*[\]\)]\s*$)",
                                        std::regex::icase);
    const std::string s(text);
    std::smatch m;
    if (std::regex_match(s, m, interval_re)) {
        const auto lo = csv::parse_number(m[1].str()), hi = csv::parse_number(m[2].str());
        if (!lo || !hi || *lo > *hi) {
            warnings.push_back("bad target interval '" + s + "'");
            return std::nullopt;
        }
        return Interval{*lo, *hi};
    }
    if (std::regex_match(s, m, label_re)) {
        std::string label = m[1].str();
        if (label.size() >= 2 && (label.front() == '"' || label.front() == '\'') && label.back() == label.front()) {
            label = label.substr(1, label.size() - 2);
        }
        if (schema.task == Task::classification && !schema.class_index(label)) {
            warnings.push_back("unknown target label '" + label + "'");
            return std::nullopt;
        }
        return label;
    }
    warnings.push_back("unrecognised target '" + s + "'");
    return std::nullopt;
}

}  // namespace detail

/// Parse one "If [Target]=t, Then ..." line. Conditions that do not fit the
/// schema are dropped with a warning; a bad target yields no rule.
inline RuleParseResult parse_rule(std::string_view line, const Schema& schema) {
    static const std::regex line_re(R"(^\s*[-*\d.\s]*\**\s*if\s+(.+?)\s*,?\s+then\s+(.*?)\s*\.?\s*$)",
                                    std::regex::icase);
    RuleParseResult out;
    const std::string s(line);
    std::smatch m;
    if (!std::regex_match(s, m, line_re)) {
        out.warnings.push_back("not an if-then rule: '" + s + "'");
        return out;
    }
    std::string target_part = m[1].str();
    if (!target_part.empty() && target_part.back() == ',') target_part.pop_back();
    auto target = detail::parse_target(target_part, schema, out.warnings);
    if (!target) return out;
    Rule rule{*target, {}};
    const std::string body = m[2].str();
    if (detail::lower_ascii(csv::trim(body)) != "(no constraints)") {
        for (const auto& part : detail::split_and(body)) {
            if (part.empty()) continue;
            const auto rc = detail::split_condition(part);
            if (!rc) {
                out.warnings.push_back("unparseable condition '" + part + "'");
                continue;
            }
            if (auto c = detail::check_condition(*rc, schema, out.warnings)) rule.conditions.push_back(*c);
        }
    }
    rule.conditions = detail::canonicalize(rule.conditions, schema, out.warnings);
    detail::sort_conditions(rule.conditions, schema);
    out.rule = std::move(rule);
    return out;
}

struct RuleBlockParse {
    std::vector<Rule> rules;
    std::vector<std::string> warnings;
};

/// Parse every if-then line in free text (e.g. a model reply). Later rules
/// for an already seen target are ignored.
inline RuleBlockParse parse_rule_block(std::string_view text, const Schema& schema) {
    RuleBlockParse out;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        const auto line = csv::trim(text.substr(start, end - start));
        start = end + 1;
        if (detail::lower_ascii(line).find("if ") == std::string::npos ||
            detail::lower_ascii(line).find("then") == std::string::npos) {
            continue;
        }
        auto r = parse_rule(line, schema);
        out.warnings.insert(out.warnings.end(), r.warnings.begin(), r.warnings.end());
        if (!r.rule) continue;
        const bool seen = std::any_of(out.rules.begin(), out.rules.end(),
                                      [&](const Rule& x) { return x.target == r.rule->target; });
        if (seen) {
            out.warnings.push_back("duplicate rule for " + target_text(r.rule->target) + " ignored");
        } else {
            out.rules.push_back(std::move(*r.rule));
        }
    }
    return out;
}

// --- decision path text (merge prompt input) ----------------------------------

inline std::string render_path(const RawPath& path, const RuleTarget& target, const Schema& schema) {
    std::string out = "Path (support " + std::to_string(path.support) + "): If ";
    std::vector<std::string> parts;
    for (const auto& p : path.predicates) {
        const auto& name = schema.columns[p.column].name;
        if (p.op == Op::eq) {
            parts.push_back(name + " = " + p.category);
        } else {
            parts.push_back(name + " " + std::string(op_text(p.op)) + " " + format_sig4(p.value));
        }
    }
    for (const auto& [col, cat] : path.excluded) parts.push_back(schema.columns[col].name + " != " + cat);
    if (parts.empty()) parts.push_back("(always)");
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += " and ";
        out += parts[i];
    }
    return out + ", Then " + target_text(target);
}

struct ParsedPath {
    RuleTarget target;
    RawPath path;
};

/// Inverse of render_path (at four significant digits).
inline std::optional<ParsedPath> parse_path(std::string_view line, const Schema& schema) {
    static const std::regex re(R"(^\s*Path \(support (\d+)\): If (.*), Then (.+?)\s*$)");
    const std::string s(line);
    std::smatch m;
    if (!std::regex_match(s, m, re)) return std::nullopt;
    std::vector<std::string> warnings;
    auto target = detail::parse_target(m[3].str(), schema, warnings);
    if (!target) return std::nullopt;
    ParsedPath out{*target, {}};
    out.path.support = static_cast<std::size_t>(std::stoull(m[1].str()));
    const std::string body = m[2].str();
    if (body != "(always)") {
        for (const auto& part : detail::split_and(body)) {
            const auto rc = detail::split_condition(part);
            if (!rc) return std::nullopt;
            const auto col = schema.find(rc->feature);
            if (!col) return std::nullopt;
            if (rc->op == "!=") {
                out.path.excluded.emplace_back(*col, rc->value);
                continue;
            }
            const auto op = parse_op(rc->op);
            if (!op) return std::nullopt;
            if (*op == Op::eq) {
                out.path.predicates.push_back({*col, Op::eq, 0, rc->value});
            } else {
                const auto v = csv::parse_number(rc->value);
                if (!v) return std::nullopt;
                out.path.predicates.push_back({*col, *op, *v, {}});
            }
        }
    }
    return out;
}

// --- serialization -------------------------------------------------------------------

inline nlohmann::json target_to_json(const RuleTarget& t) {
    if (const auto* label = std::get_if<std::string>(&t)) return *label;
    const auto& iv = std::get<Interval>(t);
    return {{"lo", iv.lo}, {"hi", iv.hi}};
}

inline RuleTarget target_from_json(const nlohmann::json& j) {
    if (j.is_string()) return j.get<std::string>();
    return Interval{j.at("lo").get<double>(), j.at("hi").get<double>()};
}

inline nlohmann::json ruleset_to_json(const RuleSet& rs, const Schema& schema) {
    nlohmann::json rules = nlohmann::json::array();
    for (const auto& r : rs.rules) {
        nlohmann::json conds = nlohmann::json::array();
        auto sorted = r.conditions;
        detail::sort_conditions(sorted, schema);
        for (const auto& c : sorted) {
            nlohmann::json jc{{"feature", c.feature}, {"op", std::string(op_text(c.op))}, {"support", c.source_support}};
            if (c.numeric()) {
                jc["value"] = c.bound();
            } else {
                jc["value"] = std::get<std::string>(c.value);
            }
            conds.push_back(std::move(jc));
        }
        rules.push_back({{"target", target_to_json(r.target)}, {"conditions", conds}, {"text", render_rule(r, schema)}});
    }
    return {{"provenance", rs.provenance == RuleProvenance::llm ? "llm" : "deterministic"},
            {"runs_aggregated", rs.runs_aggregated},
            {"rules", rules}};
}

inline RuleSet ruleset_from_json(const nlohmann::json& j) {
    try {
        RuleSet rs;
        rs.provenance = j.at("provenance").get<std::string>() == "llm" ? RuleProvenance::llm
                                                                        : RuleProvenance::deterministic;
        rs.runs_aggregated = j.at("runs_aggregated").get<std::size_t>();
        for (const auto& jr : j.at("rules")) {
            Rule r{target_from_json(jr.at("target")), {}};
            for (const auto& jc : jr.at("conditions")) {
                Condition c;
                c.feature = jc.at("feature").get<std::string>();
                const auto op = parse_op(jc.at("op").get<std::string>());
                if (!op) throw InputError("bad operator in rule document");
                c.op = *op;
                if (jc.at("value").is_string()) {
                    c.value = jc["value"].get<std::string>();
                } else {
                    c.value = jc["value"].get<double>();
                }
                c.source_support = jc.value("support", std::size_t{0});
                r.conditions.push_back(std::move(c));
            }
            rs.rules.push_back(std::move(r));
        }
        return rs;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("bad rule document: ") + e.what());
    }
}

}  // namespace refine
