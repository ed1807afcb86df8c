#pragma once

// Rule-guided generation: forest -> top-k decision paths -> merged rules,
// repeated g times and aggregated, then rows requested per rule until each
// rule's quota of accepted rows is met.

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "refine/dataset.hpp"
#include "refine/forest.hpp"
#include "refine/llm.hpp"
#include "refine/parallel.hpp"
#include "refine/random.hpp"
#include "refine/rules.hpp"

namespace refine {

enum class MergeMode { deterministic, llm };

inline const char* merge_mode_name(MergeMode m) { return m == MergeMode::deterministic ? "deterministic" : "llm"; }

inline MergeMode parse_merge_mode(std::string_view s) {
    if (s == "deterministic") return MergeMode::deterministic;
    if (s == "llm") return MergeMode::llm;
    throw ConfigError("unknown merge mode '" + std::string(s) + "' (expected deterministic or llm)");
}

inline const char* rule_form_name(RuleForm f) { return f == RuleForm::ifthen ? "ifthen" : "natural"; }

inline RuleForm parse_rule_form(std::string_view s) {
    if (s == "ifthen") return RuleForm::ifthen;
    if (s == "natural") return RuleForm::natural;
    throw ConfigError("unknown rule form '" + std::string(s) + "' (expected ifthen or natural)");
}

struct GenerationPlan {
    std::size_t total_target = 2000;
    ForestParams forest;
    std::size_t g = 5;
    std::size_t k = 3;
    /// Requests per rule before giving up on its quota.
    std::size_t max_attempts = 100;
    std::size_t batch_size = 50;
    /// Target intervals for regression tasks.
    std::size_t num_intervals = 3;
    MergeMode merge = MergeMode::deterministic;
    RuleForm rule_form = RuleForm::ifthen;
    /// Prompt with example rows instead of rules.
    bool skip_rules = false;
    std::size_t fewshot_examples = 5;
    std::uint64_t seed = 0;

    bool operator==(const GenerationPlan&) const = default;

    void validate() const {
        forest.validate();
        if (g < 1) throw ConfigError("g must be >= 1");
        if (k < 1) throw ConfigError("k must be >= 1");
        if (k > forest.num_trees) throw ConfigError("k exceeds the number of forest trees");
        if (max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (num_intervals < 1) throw ConfigError("num_intervals must be >= 1");
    }
};

/// Near-equal split of `total`; the remainder goes to the earliest targets.
inline std::vector<std::size_t> balance_quota(std::size_t total, std::size_t targets) {
    if (targets == 0) throw InputError("no targets to distribute a quota over");
    std::vector<std::size_t> q(targets, total / targets);
    for (std::size_t i = 0; i < total % targets; ++i) ++q[i];
    return q;
}

// --- rule extraction ---------------------------------------------------------------

struct RuleExtraction {
    RuleSet rules;
    std::vector<RuleSet> runs;
    std::vector<Interval> intervals;  ///< regression only
    std::vector<std::string> warnings;
    std::size_t llm_fallbacks = 0;
};

/// Targets rules are built for: the classes seen in training, or the
/// regression intervals.
inline std::vector<RuleTarget> rule_targets(const Dataset& train, const std::vector<Interval>& intervals) {
    std::vector<RuleTarget> out;
    if (train.schema.task == Task::classification) {
        std::vector<bool> seen(train.schema.num_classes(), false);
        for (std::size_t r = 0; r < train.size(); ++r) seen[train.label(r)] = true;
        for (std::size_t c = 0; c < seen.size(); ++c) {
            if (seen[c]) out.emplace_back(train.schema.classes()[c]);
        }
    } else {
        for (const auto& iv : intervals) out.emplace_back(iv);
    }
    return out;
}

inline RuleTarget path_target(const RawPath& p, const Schema& schema, const std::vector<Interval>& intervals) {
    if (schema.task == Task::classification) return schema.classes()[static_cast<std::size_t>(p.outcome)];
    return intervals[interval_index(intervals, p.outcome)];
}

/// Paths of the selected trees grouped by target, in target order. A target
/// none of the selected trees predicts borrows paths from the next best
/// trees; failing that it gets one unconstrained path.
inline std::vector<TargetPaths> group_paths(const std::vector<DecisionTree>& trees, std::span<const std::size_t> ranked,
                                            std::size_t k, const std::vector<RuleTarget>& targets,
                                            const Schema& schema, const std::vector<Interval>& intervals) {
    std::vector<TargetPaths> groups;
    for (const auto& t : targets) groups.push_back({t, {}});
    auto add = [&](std::size_t tree, std::optional<std::size_t> only) {
        for (auto& p : extract_paths(trees[tree])) {
            const auto t = path_target(p, schema, intervals);
            const auto it = std::find(targets.begin(), targets.end(), t);
            if (it == targets.end()) continue;
            const auto gi = static_cast<std::size_t>(it - targets.begin());
            if (only && gi != *only) continue;
            groups[gi].paths.push_back(std::move(p));
        }
    };
    for (std::size_t i = 0; i < k; ++i) add(ranked[i], std::nullopt);
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        for (std::size_t i = k; i < ranked.size() && groups[gi].paths.empty(); ++i) add(ranked[i], gi);
        if (groups[gi].paths.empty()) groups[gi].paths.push_back(RawPath{});
    }
    return groups;
}

/// g independent forest -> top-k -> merge runs, aggregated by majority.
/// Run r trains its forest with seed + r.
inline RuleExtraction extract_rules(const Dataset& train, const GenerationPlan& plan, Gateway* gateway = nullptr,
                                    std::size_t jobs = 1) {
    plan.validate();
    if (train.empty()) throw InputError("rule extraction needs training rows");
    if (plan.merge == MergeMode::llm && !gateway) throw ConfigError("llm merge needs a gateway");
    const auto stats = column_stats(train);
    RuleExtraction out;

    std::vector<std::vector<DecisionTree>> forests(plan.g);
    std::vector<std::vector<std::size_t>> ranked(plan.g);
    for (std::size_t r = 0; r < plan.g; ++r) {
        auto fp = plan.forest;
        fp.seed = plan.forest.seed + r;
        forests[r] = train_forest(train, fp, jobs);
        ranked[r] = select_top_k(forests[r], train, forests[r].size());
    }
    if (train.schema.task == Task::regression) {
        out.intervals = bin_regression_targets(train, plan.num_intervals, &forests[0][ranked[0][0]]);
    }
    const auto targets = rule_targets(train, out.intervals);
    if (targets.empty()) throw InputError("no rule targets found in the training data");

    for (std::size_t r = 0; r < plan.g; ++r) {
        const auto groups = group_paths(forests[r], ranked[r], plan.k, targets, train.schema, out.intervals);
        if (plan.merge == MergeMode::llm) {
            auto merged = merge_llm(groups, train.schema, &stats, *gateway);
            out.warnings.insert(out.warnings.end(), merged.warnings.begin(), merged.warnings.end());
            out.llm_fallbacks += merged.fallbacks;
            out.runs.push_back(std::move(merged.rules));
        } else {
            out.runs.push_back(merge_deterministic(groups, train.schema, &stats));
        }
    }
    out.rules = round_rules(aggregate(out.runs, plan.g, train.schema));
    if (plan.merge == MergeMode::llm && out.llm_fallbacks < plan.g * targets.size()) {
        out.rules.provenance = RuleProvenance::llm;
    }
    return out;
}

// --- generation loop -------------------------------------------------------------------

struct RuleYield {
    RuleTarget target;
    std::size_t quota = 0;
    std::size_t accepted = 0;
    std::size_t attempts = 0;
    std::size_t rows_seen = 0;
    std::size_t failed_requests = 0;
    std::map<std::string, std::size_t> rejects;  ///< by reason

    bool met() const { return accepted >= quota; }
};

struct GenerationResult {
    RuleSet rules;
    Dataset synthetic;
    std::vector<RuleYield> yields;

    std::size_t quota_total() const {
        std::size_t n = 0;
        for (const auto& y : yields) n += y.quota;
        return n;
    }
    bool shortfall() const { return synthetic.size() < quota_total(); }
    /// Share of the overall quota that was filled (1 for an empty quota).
    double fill_ratio() const {
        const auto q = quota_total();
        return q ? static_cast<double>(synthetic.size()) / static_cast<double>(q) : 1.0;
    }
};

inline bool in_target(const Dataset& ds, std::size_t r, const RuleTarget& t) {
    if (const auto* label = std::get_if<std::string>(&t)) return ds.category(r, ds.schema.target) == *label;
    return std::get<Interval>(t).contains(ds.target_value(r));
}

/// Request rows for every rule until its quota is met or `max_attempts`
/// requests have been made. Rows are labelled with the target of the rule
/// that produced them and concatenated in rule order.
inline GenerationResult generate_rows(const Dataset& train, const RuleSet& rules, const GenerationPlan& plan,
                                      Gateway& gateway, std::size_t jobs = 1) {
    plan.validate();
    if (rules.rules.empty()) throw InputError("rule set is empty");
    gateway.check_ready();
    const auto& schema = train.schema;
    const auto quotas = balance_quota(plan.total_target, rules.rules.size());
    const auto tpl = default_template(PromptKind::generate);

    GenerationResult out;
    out.rules = round_rules(rules);
    out.synthetic = Dataset{schema, {}, Provenance::synthetic};
    out.yields.resize(rules.rules.size());
    std::vector<std::vector<Row>> produced(rules.rules.size());

    parallel_for(rules.rules.size(), std::max<std::size_t>(jobs, 1), [&](std::size_t i) {
        const auto& rule = out.rules.rules[i];
        auto& y = out.yields[i];
        y.target = rule.target;
        y.quota = quotas[i];
        Dataset shots{schema, {}, Provenance::real};
        if (plan.skip_rules) {
            std::vector<std::size_t> ids;
            for (std::size_t r = 0; r < train.size(); ++r) {
                if (in_target(train, r, rule.target)) ids.push_back(r);
            }
            Rng rng(derive_seed(plan.seed, i));
            rng.shuffle(ids);
            ids.resize(std::min(ids.size(), plan.fewshot_examples));
            std::sort(ids.begin(), ids.end());
            shots = train.subset(ids);
        }
        auto& rows = produced[i];
        while (rows.size() < y.quota && y.attempts < plan.max_attempts) {
            ++y.attempts;
            const std::size_t want = std::min(plan.batch_size, y.quota - rows.size());
            const std::string prompt = plan.skip_rules
                                           ? build_fewshot_prompt(rule.target, shots, want, tpl)
                                           : build_generation_prompt(rule, schema, want, tpl, plan.rule_form);
            std::string reply;
            try {
                reply = gateway.complete(prompt);
            } catch (const TransportError&) {
                ++y.failed_requests;
                continue;
            }
            auto batch = parse_rows(reply, schema, rule.target);
            y.rows_seen += batch.attempted();
            for (const auto& rej : batch.rejects) ++y.rejects[rej.reason];
            for (auto& row : batch.accepted) {
                if (rows.size() >= y.quota) break;
                rows.push_back(std::move(row));
            }
        }
        y.accepted = rows.size();
    });
    for (auto& rows : produced) {
        out.synthetic.rows.insert(out.synthetic.rows.end(), std::make_move_iterator(rows.begin()),
                                  std::make_move_iterator(rows.end()));
    }
    return out;
}

/// Full rule-guided generation: extract and aggregate rules, then generate.
inline std::pair<RuleExtraction, GenerationResult> run_component_one(const Dataset& train, const GenerationPlan& plan,
                                                                     Gateway& gateway, std::size_t jobs = 1) {
    auto extraction = extract_rules(train, plan, &gateway, jobs);
    auto result = generate_rows(train, extraction.rules, plan, gateway, jobs);
    return {std::move(extraction), std::move(result)};
}

inline nlohmann::json yields_to_json(const std::vector<RuleYield>& yields) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& y : yields) {
        arr.push_back({{"target", target_to_json(y.target)},
                       {"quota", y.quota},
                       {"accepted", y.accepted},
                       {"attempts", y.attempts},
                       {"rows_seen", y.rows_seen},
                       {"failed_requests", y.failed_requests},
                       {"rejects", y.rejects},
                       {"met", y.met()}});
    }
    return arr;
}

inline nlohmann::json manifest_to_json(const GenerationResult& r, const Schema& schema) {
    std::size_t rejected = 0;
    for (const auto& y : r.yields) {
        for (const auto& [reason, n] : y.rejects) rejected += n;
    }
    return {{"rules", ruleset_to_json(r.rules, schema)},
            {"quota_total", r.quota_total()},
            {"rows", r.synthetic.size()},
            {"rejected", rejected},
            {"fill_ratio", r.fill_ratio()},
            {"shortfall", r.shortfall()},
            {"per_rule", yields_to_json(r.yields)}};
}

}  // namespace refine
