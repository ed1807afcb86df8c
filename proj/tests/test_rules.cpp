#include <gtest/gtest.h>

#include <cmath>

#include "refine/random.hpp"
#include "refine/rules.hpp"
#include "support.hpp"

using namespace refine;
using testing_support::table;

namespace {

Schema schema3() {
    return table("x,y,c,label\n1,2,red,0\n3,4,blue,1\n5,6,green,1\n").schema;
}

RawPath path(std::vector<PathPredicate> preds, std::size_t support, double outcome = 0) {
    RawPath p;
    p.predicates = std::move(preds);
    p.support = support;
    p.outcome = outcome;
    return p;
}

Condition cond(std::string f, Op op, double v) { return Condition{std::move(f), op, v, 0}; }

const Condition* find_cond(const Rule& r, const std::string& f, bool lower) {
    for (const auto& c : r.conditions) {
        if (c.feature == f && c.numeric() && is_lower(c.op) == lower) return &c;
    }
    return nullptr;
}

}  // namespace

TEST(MergeDeterministic, SupportWeightedMeanOfBounds) {
    const auto s = schema3();
    const std::vector<TargetPaths> groups = {
        {std::string("1"), {path({{0, Op::gt, 4, {}}}, 10), path({{0, Op::gt, 6, {}}}, 10)}}};
    const auto rs = merge_deterministic(groups, s);
    ASSERT_EQ(rs.rules.size(), 1u);
    ASSERT_EQ(rs.rules[0].conditions.size(), 1u);
    EXPECT_EQ(rs.rules[0].conditions[0].op, Op::gt);
    EXPECT_DOUBLE_EQ(rs.rules[0].conditions[0].bound(), 5.0);

    const std::vector<TargetPaths> skewed = {
        {std::string("1"), {path({{0, Op::gt, 4, {}}}, 30), path({{0, Op::gt, 8, {}}}, 10)}}};
    EXPECT_DOUBLE_EQ(merge_deterministic(skewed, s).rules[0].conditions[0].bound(), 5.0);
}

TEST(MergeDeterministic, SinglePathPerClassIsKeptVerbatim) {
    const auto s = schema3();
    const std::vector<TargetPaths> groups = {
        {std::string("0"), {path({{0, Op::le, 2, {}}, {1, Op::gt, 1, {}}}, 5)}},
        {std::string("1"), {path({{0, Op::gt, 2, {}}, {2, Op::eq, 0, "red"}}, 7, 1)}}};
    const auto rs = merge_deterministic(groups, s);
    EXPECT_EQ(render_rule(rs.rules[0], s), "If [Target]=0, Then x <= 2.000 and y > 1.000");
    EXPECT_EQ(render_rule(rs.rules[1], s), "If [Target]=1, Then x > 2.000 and c = red");
}

TEST(MergeDeterministic, OverlapSplitsAtMidpoint) {
    const auto s = schema3();
    const std::vector<TargetPaths> groups = {{std::string("0"), {path({{0, Op::le, 8, {}}}, 5)}},
                                             {std::string("1"), {path({{0, Op::gt, 4, {}}}, 5, 1)}}};
    const auto rs = merge_deterministic(groups, s);
    EXPECT_EQ(render_rule(rs.rules[0], s), "If [Target]=0, Then x <= 6.000");
    EXPECT_EQ(render_rule(rs.rules[1], s), "If [Target]=1, Then x > 6.000");
}

TEST(MergeDeterministic, Errors) {
    const auto s = schema3();
    EXPECT_THROW(merge_deterministic({}, s), InputError);
    EXPECT_THROW(merge_deterministic({{std::string("0"), {}}}, s), InputError);
}

TEST(MergeDeterministic, SharedFeaturesEndUpDisjoint) {
    const auto s = schema3();
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        Rng rng(seed);
        std::vector<TargetPaths> groups = {{std::string("0"), {}}, {std::string("1"), {}}};
        for (auto& g : groups) {
            const auto n = 1 + rng.below(4);
            for (std::size_t i = 0; i < n; ++i) {
                std::vector<PathPredicate> preds;
                for (std::size_t col = 0; col < 2; ++col) {
                    const double a = std::round(rng.uniform(0, 10)), b = a + 1 + std::round(rng.uniform(0, 5));
                    switch (rng.below(4)) {
                        case 0: preds.push_back({col, Op::gt, a, {}}); break;
                        case 1: preds.push_back({col, Op::le, b, {}}); break;
                        case 2:
                            preds.push_back({col, Op::gt, a, {}});
                            preds.push_back({col, Op::le, b, {}});
                            break;
                        default: break;
                    }
                }
                g.paths.push_back(path(preds, 1 + rng.below(20)));
            }
        }
        ColumnStats st;
        st.numeric = {NumericStats{0, 16, 8, 4}, NumericStats{0, 16, 8, 4}, std::nullopt, std::nullopt};
        const auto rs = merge_deterministic(groups, s, seed % 2 ? &st : nullptr);
        for (const char* f : {"x", "y"}) {
            const auto a = feature_box(rs.rules[0], f), b = feature_box(rs.rules[1], f);
            const bool both = std::isfinite(a.lo) || std::isfinite(a.hi);
            const bool both_b = std::isfinite(b.lo) || std::isfinite(b.hi);
            if (both && both_b) EXPECT_TRUE(boxes_disjoint(a, b)) << "seed " << seed << " feature " << f;
            EXPECT_FALSE(a.empty());
            EXPECT_FALSE(b.empty());
        }
    }
}

TEST(Aggregate, KeepsMajorityConditionsWithMeanBounds) {
    const auto s = schema3();
    std::vector<RuleSet> runs(5);
    const double values[] = {4, 6, 5};
    for (std::size_t i = 0; i < 5; ++i) {
        Rule r{std::string("1"), {}};
        if (i < 3) r.conditions.push_back(cond("y", Op::gt, values[i]));
        if (i < 2) r.conditions.push_back(cond("x", Op::le, 9));
        runs[i].rules.push_back(r);
    }
    const auto out = aggregate(runs, 5, s);
    ASSERT_EQ(out.rules[0].conditions.size(), 1u);
    EXPECT_EQ(out.rules[0].conditions[0].feature, "y");
    EXPECT_DOUBLE_EQ(out.rules[0].conditions[0].bound(), 5.0);
    EXPECT_EQ(out.runs_aggregated, 5u);
}

TEST(Aggregate, SingleRunIsIdentity) {
    const auto s = schema3();
    RuleSet r;
    r.rules.push_back({std::string("0"), {cond("x", Op::gt, 1.5), cond("x", Op::le, 3.25), {"c", Op::eq, std::string("red"), 4}}});
    r.rules.push_back({std::string("1"), {cond("y", Op::ge, 7)}});
    EXPECT_EQ(aggregate({r}, 1, s), r);
}

TEST(Aggregate, RepeatedRuleSetIsAFixedPoint) {
    const auto s = schema3();
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        RuleSet r;
        for (const char* t : {"0", "1"}) {
            Rule rule{std::string(t), {}};
            const double lo = rng.uniform(-50, 50);
            rule.conditions.push_back({"x", Op::gt, lo, static_cast<std::size_t>(rng.below(30))});
            rule.conditions.push_back({"x", Op::le, lo + rng.uniform(0.1, 9), static_cast<std::size_t>(rng.below(30))});
            if (rng.below(2)) rule.conditions.push_back({"c", Op::eq, std::string("blue"), 3});
            r.rules.push_back(rule);
        }
        for (std::size_t g : {2u, 3u, 5u, 7u}) {
            EXPECT_EQ(aggregate(std::vector<RuleSet>(g, r), g, s).rules, r.rules) << "seed " << seed << " g " << g;
        }
    }
}

TEST(Aggregate, AddingARunWithTheConditionNeverRemovesIt) {
    const auto s = schema3();
    for (unsigned mask = 0; mask < 32; ++mask) {
        std::vector<RuleSet> runs;
        for (std::size_t i = 0; i < 5; ++i) {
            RuleSet rs;
            Rule r{std::string("1"), {}};
            if (mask & (1u << i)) r.conditions.push_back(cond("x", Op::gt, static_cast<double>(i)));
            rs.rules.push_back(r);
            runs.push_back(rs);
        }
        const bool before = find_cond(aggregate(runs, 5, s).rules[0], "x", true) != nullptr;
        RuleSet extra;
        extra.rules.push_back({std::string("1"), {cond("x", Op::gt, 2)}});
        runs.push_back(extra);
        const bool after = find_cond(aggregate(runs, 6, s).rules[0], "x", true) != nullptr;
        if (before) EXPECT_TRUE(after) << mask;
    }
}

TEST(Aggregate, CategoryNeedsOneValueInTheMajority) {
    const auto s = schema3();
    std::vector<RuleSet> runs(5);
    const char* cats[] = {"red", "red", "blue", "blue", "green"};
    for (std::size_t i = 0; i < 5; ++i) {
        runs[i].rules.push_back({std::string("1"), {{"c", Op::eq, std::string(cats[i]), 1}}});
    }
    EXPECT_TRUE(aggregate(runs, 5, s).rules[0].conditions.empty());
    runs[4].rules[0].conditions[0].value = std::string("red");
    const auto out = aggregate(runs, 5, s);
    ASSERT_EQ(out.rules[0].conditions.size(), 1u);
    EXPECT_EQ(std::get<std::string>(out.rules[0].conditions[0].value), "red");
}

TEST(Aggregate, MismatchedTargetsAreAnError) {
    const auto s = schema3();
    RuleSet a, b;
    a.rules.push_back({std::string("0"), {}});
    b.rules.push_back({std::string("1"), {}});
    EXPECT_THROW(aggregate({a, b}, 2, s), InputError);
    EXPECT_THROW(aggregate({a}, 2, s), InputError);
}

TEST(RenderRule, CanonicalSurfaceForm) {
    const auto s = schema3();
    EXPECT_EQ(render_rule({std::string("1"), {cond("x", Op::ge, 2.0)}}, s), "If [Target]=1, Then x >= 2.000");
    EXPECT_EQ(render_rule({std::string("1"), {}}, s), "If [Target]=1, Then (no constraints)");
    EXPECT_EQ(render_rule({std::string("0"), {cond("y", Op::lt, 1234.6), cond("x", Op::gt, 86.5)}}, s),
              "If [Target]=0, Then x > 86.50 and y < 1235");
}

TEST(RenderRule, RegressionIntervalTarget) {
    const auto s = table("x,y\n1,0.5\n2,1.5\n", "y").schema;
    EXPECT_EQ(render_rule({Interval{0, 50}, {cond("x", Op::le, 3)}}, s), "If [Target] in [0.000, 50.00], Then x <= 3.000");
}

TEST(Satisfies, StrictAndEmptyRules) {
    const auto s = schema3();
    const Row five = {5.0, 0.0, std::string("red"), std::string("1")};
    const Row four = {4.0, 0.0, std::string("red"), std::string("1")};
    const Rule gt4{std::string("1"), {cond("x", Op::gt, 4)}};
    EXPECT_TRUE(satisfies(five, gt4, s));
    EXPECT_FALSE(satisfies(four, gt4, s));
    EXPECT_TRUE(satisfies(four, Rule{std::string("1"), {}}, s));
    EXPECT_FALSE(satisfies(five, Rule{std::string("1"), {{"c", Op::eq, std::string("blue"), 0}}}, s));
}

TEST(ParseRule, RenderingRoundTrips) {
    const auto s = schema3();
    const Op lowers[] = {Op::gt, Op::ge}, uppers[] = {Op::lt, Op::le};
    for (std::uint64_t seed = 0; seed < 500; ++seed) {
        Rng rng(seed);
        Rule r{std::string(rng.below(2) ? "1" : "0"), {}};
        for (const char* f : {"x", "y"}) {
            const double lo = round_sig4(rng.uniform(-1000, 1000));
            const double hi = round_sig4(lo + rng.uniform(0.5, 500));
            const auto pick = rng.below(4);
            if (pick & 1) r.conditions.push_back(cond(f, lowers[rng.below(2)], lo));
            if (pick & 2) r.conditions.push_back(cond(f, uppers[rng.below(2)], hi));
        }
        if (rng.below(2)) r.conditions.push_back({"c", Op::eq, std::string("green"), 0});
        detail::sort_conditions(r.conditions, s);
        const auto parsed = parse_rule(render_rule(r, s), s);
        ASSERT_TRUE(parsed.rule) << render_rule(r, s);
        EXPECT_EQ(*parsed.rule, r) << render_rule(r, s);
        EXPECT_TRUE(parsed.warnings.empty());
    }
}

TEST(ParseRule, DropsConditionsThatDoNotFitTheSchema) {
    const auto s = schema3();
    const auto r = parse_rule("If [Target]=1, Then x > 2 and height < 3 and c = purple and c > 1", s);
    ASSERT_TRUE(r.rule);
    ASSERT_EQ(r.rule->conditions.size(), 1u);
    EXPECT_EQ(r.rule->conditions[0].feature, "x");
    EXPECT_EQ(r.warnings.size(), 3u);
}

TEST(ParseRule, UnknownLabelYieldsNoRule) {
    EXPECT_FALSE(parse_rule("If [Target]=7, Then x > 2", schema3()).rule);
}

TEST(ParseRuleBlock, FindsRulesInFreeText) {
    const auto s = schema3();
    const auto b = parse_rule_block("Sure, here you go:\n1. If [Target]=0, Then x <= 3\n2. If [Target]=1, Then x > 3\n", s);
    ASSERT_EQ(b.rules.size(), 2u);
    EXPECT_EQ(b.rules[1].conditions[0].op, Op::gt);
}

TEST(RenderPath, ParsesBack) {
    const auto s = schema3();
    RawPath p = path({{0, Op::gt, 1.5, {}}, {1, Op::le, 20, {}}}, 9, 1);
    p.excluded.emplace_back(2, "red");
    const auto text = render_path(p, std::string("1"), s);
    const auto back = parse_path(text, s);
    ASSERT_TRUE(back);
    EXPECT_EQ(std::get<std::string>(back->target), "1");
    EXPECT_EQ(back->path.predicates, p.predicates);
    EXPECT_EQ(back->path.excluded, p.excluded);
    EXPECT_EQ(back->path.support, 9u);
}

TEST(RuleSetJson, RoundTrips) {
    const auto s = schema3();
    RuleSet rs;
    rs.provenance = RuleProvenance::llm;
    rs.runs_aggregated = 5;
    rs.rules.push_back({std::string("0"), {{"x", Op::gt, 0.1 + 0.2, 3}, {"c", Op::eq, std::string("red"), 2}}});
    rs.rules.push_back({Interval{1.5, 2.5}, {}});
    EXPECT_EQ(ruleset_from_json(ruleset_to_json(rs, s)), rs);
}

TEST(RoundRules, BoundsMatchTheirText) {
    const auto s = schema3();
    RuleSet rs;
    rs.rules.push_back({std::string("1"), {cond("x", Op::gt, 7.55671), cond("y", Op::le, 123456.7), {"c", Op::eq, std::string("red"), 1}}});
    const auto r = round_rules(rs);
    EXPECT_DOUBLE_EQ(r.rules[0].conditions[0].bound(), 7.557);
    EXPECT_DOUBLE_EQ(r.rules[0].conditions[1].bound(), 123500);
    EXPECT_EQ(*parse_rule(render_rule(r.rules[0], s), s).rule, (Rule{r.rules[0].target, {cond("x", Op::gt, 7.557), cond("y", Op::le, 123500), {"c", Op::eq, std::string("red"), 0}}}));
    EXPECT_EQ(round_rules(r), r);
}
