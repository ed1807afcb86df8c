#pragma once

// Pipeline stages over a config: rules -> generate -> filter -> eval.
// Every stage persists its artifacts under the output directory.

#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "json.hpp"

#include "refine/boosting.hpp"
#include "refine/config.hpp"
#include "refine/dataset.hpp"
#include "refine/filter.hpp"
#include "refine/generator.hpp"
#include "refine/llm.hpp"

namespace refine {

enum ExitCode : int { exit_ok = 0, exit_input = 1, exit_shortfall = 2, exit_stage = 3 };

/// Generation below this share of the quota counts as a shortfall.
inline constexpr double min_fill_ratio = 0.9;

struct StageContext {
    PipelineConfig config;
    Dataset train;
    Dataset test;
    ColumnStats stats;
    std::filesystem::path out;

    /// Path of an output file; creates the output directory on first use.
    std::string artifact(const char* name) const {
        std::filesystem::create_directories(out);
        return (out / name).string();
    }
};

inline Dataset load_dataset(const std::string& path, const std::optional<Schema>& schema, const std::string& target) {
    InferOptions opt;
    opt.target = target;
    return parse_csv(read_file(path), schema, opt);
}

/// Load the data and split it.
inline StageContext prepare(const PipelineConfig& config) {
    config.validate();
    StageContext ctx;
    ctx.config = config;
    std::optional<Schema> schema;
    if (!config.schema.empty()) schema = schema_from_json(nlohmann::json::parse(read_file(config.schema)));
    const auto full = load_dataset(config.dataset, schema, config.target);
    if (full.schema.task == Task::classification && config.n_train < full.schema.num_classes()) {
        throw ConfigError("n_train is smaller than the number of classes");
    }
    auto split = stratified_split(full, config.n_train, config.split_seed);
    ctx.train = std::move(split.train);
    if (!config.test_dataset.empty()) {
        ctx.test = load_dataset(config.test_dataset, full.schema, config.target);
    } else {
        ctx.test = std::move(split.test);
    }
    ctx.stats = column_stats(ctx.train);
    ctx.out = config.out_dir;
    return ctx;
}

inline std::unique_ptr<Gateway> make_gateway(const StageContext& ctx) {
    Responder responder;
    if (ctx.config.gateway.backend == Backend::mock) {
        responder = MockResponder(ctx.train.schema, ctx.stats, ctx.config.mock_options());
    }
    return std::make_unique<Gateway>(ctx.config.gateway, std::move(responder));
}

inline void write_json(const std::string& path, const nlohmann::json& j) { write_file(path, j.dump(2) + "\n"); }

// --- rules ---------------------------------------------------------------------------

struct RulesStage {
    RuleSet rules;
    nlohmann::json summary;
};

inline nlohmann::json rules_artifact(const RuleExtraction& ex, const Schema& schema) {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : ex.runs) runs.push_back(ruleset_to_json(r, schema));
    nlohmann::json intervals = nlohmann::json::array();
    for (const auto& iv : ex.intervals) intervals.push_back({iv.lo, iv.hi});
    return {{"rules", ruleset_to_json(ex.rules, schema)},
            {"runs", runs},
            {"intervals", intervals},
            {"warnings", ex.warnings},
            {"llm_fallbacks", ex.llm_fallbacks}};
}

inline RulesStage run_rules(const StageContext& ctx, Gateway& gateway) {
    if (ctx.config.merge == MergeMode::llm) gateway.check_ready();
    const auto ex = extract_rules(ctx.train, ctx.config.plan(), &gateway, ctx.config.jobs);
    write_json(ctx.artifact("rules.json"), rules_artifact(ex, ctx.train.schema));
    write_file(ctx.artifact("rules.txt"), render_rules(ex.rules, ctx.train.schema));
    return {ex.rules, {{"count", ex.rules.rules.size()}, {"warnings", ex.warnings.size()}}};
}

/// Rules from a previous `rules` run, if its artifact exists.
inline std::optional<RuleSet> load_rules(const StageContext& ctx) {
    const auto path = (ctx.out / "rules.json").string();
    if (!std::filesystem::is_regular_file(path)) return std::nullopt;
    return ruleset_from_json(nlohmann::json::parse(read_file(path)).at("rules"));
}

// --- generate ------------------------------------------------------------------------

struct GenerateStage {
    int code = exit_ok;
    nlohmann::json summary;
};

inline GenerateStage run_generate(const StageContext& ctx, Gateway& gateway, const std::optional<RuleSet>& given) {
    gateway.check_ready();
    RuleSet rules = given ? *given : run_rules(ctx, gateway).rules;
    const auto res = generate_rows(ctx.train, rules, ctx.config.plan(), gateway, ctx.config.jobs);
    write_file(ctx.artifact("syn.csv"), to_csv(res.synthetic));
    write_json(ctx.artifact("manifest.json"), manifest_to_json(res, ctx.train.schema));
    GenerateStage out;
    out.summary = {{"rows", res.synthetic.size()}, {"quota", res.quota_total()}, {"fill_ratio", res.fill_ratio()}};
    if (res.fill_ratio() < min_fill_ratio) out.code = exit_shortfall;
    return out;
}

inline Dataset read_stage_csv(const StageContext& ctx, const char* name) {
    const auto path = (ctx.out / name).string();
    if (!std::filesystem::is_regular_file(path)) throw InputError("missing artifact '" + path + "'");
    auto ds = parse_csv(read_file(path), ctx.train.schema);
    ds.provenance = Provenance::synthetic;
    return ds;
}

// --- filter --------------------------------------------------------------------------

struct FilterStage {
    int code = exit_ok;
    nlohmann::json summary;
};

inline FilterStage run_filter(const StageContext& ctx) {
    const auto syn = read_stage_csv(ctx, "syn.csv");
    if (syn.empty()) throw InputError("syn.csv holds no rows to filter");
    const auto reference = train_staged(ctx.train, ctx.config.refmodel);
    const auto res = tune(ctx.train, syn, ctx.config.filter_params(), reference, ctx.config.refmodel, ctx.config.jobs);
    const auto& rep = res.report;
    write_file(ctx.artifact("aug.csv"), to_csv(res.augmented));
    write_json(ctx.artifact("filter_report.json"), report_to_json(rep));
    write_file(ctx.artifact("proxy_pre.csv"), proxy_to_csv(rep.pre_p, syn.size()));
    write_file(ctx.artifact("proxy_post.csv"), proxy_to_csv(rep.post_p, res.augmented.size()));
    FilterStage out;
    out.summary = {{"rows_in", syn.size()},
                   {"rows_out", res.augmented.size()},
                   {"pre_gini", rep.pre_gini},
                   {"post_gini", rep.post_gini ? nlohmann::json(*rep.post_gini) : nlohmann::json(nullptr)},
                   {"chunk_size", rep.chosen_size() ? nlohmann::json(*rep.chosen_size()) : nlohmann::json(nullptr)}};
    if (res.augmented.empty()) out.code = exit_stage;
    return out;
}

// --- eval ----------------------------------------------------------------------------

inline nlohmann::json run_eval(const StageContext& ctx) {
    if (ctx.test.empty()) throw InputError("test set is empty");
    const auto data = read_stage_csv(ctx, ctx.config.skip_filter ? "syn.csv" : "aug.csv");
    const auto m = evaluate_mle(data, ctx.test, ctx.config.eval_seeds, ctx.config.refmodel,
                                ctx.config.eval_sample_size, ctx.config.jobs);
    auto j = metrics_to_json(m);
    j["source"] = ctx.config.skip_filter ? "syn.csv" : "aug.csv";
    j["test_rows"] = ctx.test.size();
    write_json(ctx.artifact("metrics.json"), j);
    return j;
}

// --- end to end ----------------------------------------------------------------------

/// rules -> generate -> filter (unless skipped) -> eval, then summary.json.
/// Returns the exit code of the first failing stage.
inline int run_pipeline(const StageContext& ctx, Gateway& gateway) {
    gateway.check_ready();
    nlohmann::json summary;
    summary["config"] = config_to_json(ctx.config);
    summary["train_rows"] = ctx.train.size();
    summary["test_rows"] = ctx.test.size();
    std::optional<RuleSet> rules;
    if (!ctx.config.skip_rules) {
        auto r = run_rules(ctx, gateway);
        summary["rules"] = r.summary;
        rules = std::move(r.rules);
    } else {
        // Few-shot prompts still need one target per class or interval.
        const auto ex = extract_rules(ctx.train, ctx.config.plan(), &gateway, ctx.config.jobs);
        RuleSet targets_only;
        for (const auto& r : ex.rules.rules) targets_only.rules.push_back({r.target, {}});
        rules = std::move(targets_only);
        summary["rules"] = {{"count", 0}, {"skipped", true}};
    }
    const auto gen = run_generate(ctx, gateway, rules);
    summary["generate"] = gen.summary;
    if (gen.code != exit_ok) return gen.code;
    if (!ctx.config.skip_filter) {
        const auto f = run_filter(ctx);
        summary["filter"] = f.summary;
        if (f.code != exit_ok) return f.code;
    } else {
        summary["filter"] = {{"skipped", true}};
    }
    summary["eval"] = run_eval(ctx);
    write_json(ctx.artifact("summary.json"), summary);
    return exit_ok;
}

/// Map an exception from a stage to an exit code and report it on stderr.
inline int report_failure(const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    if (dynamic_cast<const InputError*>(&e)) return exit_input;
    if (dynamic_cast<const nlohmann::json::exception*>(&e)) return exit_input;
    return exit_stage;
}

}  // namespace refine
