// refine: rule-guided synthetic tabular data with redundancy-aware filtering.
//
//   refine rules    --config cfg.json
//   refine generate --config cfg.json
//   refine filter   --config cfg.json
//   refine eval     --config cfg.json
//   refine pipeline --config cfg.json [--skip-filter] [--skip-rules] ...

#include <cstdio>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "refine/config.hpp"
#include "refine/pipeline.hpp"

namespace {

struct Overrides {
    std::string config;
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> jobs;
    std::optional<std::string> backend;
    std::optional<std::string> transcript;
    std::optional<std::string> dataset;
    std::optional<std::string> filter_metric;
    std::optional<std::string> merge;
    std::optional<std::string> rule_form;
    bool skip_filter = false;
    bool skip_rules = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config, "pipeline config (JSON)")->required();
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--seed", o.seed, "pipeline seed");
    cmd->add_option("--jobs", o.jobs, "worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("--backend", o.backend, "completion backend")->check(CLI::IsMember({"http", "mock"}));
    cmd->add_option("--transcript", o.transcript, "append prompts and replies to this JSONL file");
    cmd->add_option("--dataset", o.dataset, "input CSV");
    cmd->add_option("--filter-metric", o.filter_metric, "redundancy score")->check(CLI::IsMember({"gini", "entropy"}));
    cmd->add_option("--merge", o.merge, "path merger")->check(CLI::IsMember({"deterministic", "llm"}));
    cmd->add_option("--rule-form", o.rule_form, "rule wording in prompts")->check(CLI::IsMember({"ifthen", "natural"}));
    cmd->add_flag("--skip-filter", o.skip_filter, "evaluate unfiltered synthetic rows");
    cmd->add_flag("--skip-rules", o.skip_rules, "prompt with example rows instead of rules");
}

refine::PipelineConfig resolve(const Overrides& o) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(refine::read_file(o.config));
    } catch (const nlohmann::json::parse_error& e) {
        throw refine::ConfigError("'" + o.config + "' is not valid JSON: " + e.what());
    }
    auto c = refine::config_from_json(j);
    if (o.out) c.out_dir = *o.out;
    if (o.seed) c.seed = *o.seed;
    if (o.jobs) c.jobs = *o.jobs;
    if (o.backend) c.gateway.backend = refine::detail::parse_backend(*o.backend);
    if (o.transcript) c.gateway.transcript = *o.transcript;
    if (o.dataset) c.dataset = *o.dataset;
    if (o.filter_metric) c.filter_metric = refine::parse_redundancy_metric(*o.filter_metric);
    if (o.merge) c.merge = refine::parse_merge_mode(*o.merge);
    if (o.rule_form) c.rule_form = refine::parse_rule_form(*o.rule_form);
    if (o.skip_filter) c.skip_filter = true;
    if (o.skip_rules) c.skip_rules = true;
    c.validate();
    return c;
}

int run(const std::string& command, const Overrides& o) {
    const auto ctx = refine::prepare(resolve(o));
    if (command == "rules") {
        auto gateway = refine::make_gateway(ctx);
        const auto r = refine::run_rules(ctx, *gateway);
        for (const auto& rule : r.rules.rules) {
            std::printf("%s  (%zu conditions)\n", refine::target_text(rule.target).c_str(), rule.conditions.size());
        }
        return refine::exit_ok;
    }
    if (command == "generate") {
        auto gateway = refine::make_gateway(ctx);
        const auto g = refine::run_generate(ctx, *gateway, refine::load_rules(ctx));
        std::printf("generated %s rows of %s (fill %.3f)\n", g.summary["rows"].dump().c_str(),
                    g.summary["quota"].dump().c_str(), g.summary["fill_ratio"].get<double>());
        if (g.code == refine::exit_shortfall) std::fprintf(stderr, "error: quota shortfall, see manifest.json\n");
        return g.code;
    }
    if (command == "filter") {
        const auto f = refine::run_filter(ctx);
        std::printf("kept %s of %s rows; gini %s -> %s\n", f.summary["rows_out"].dump().c_str(),
                    f.summary["rows_in"].dump().c_str(), f.summary["pre_gini"].dump().c_str(),
                    f.summary["post_gini"].dump().c_str());
        if (f.code != refine::exit_ok) std::fprintf(stderr, "error: every chunk size left an empty set\n");
        return f.code;
    }
    if (command == "eval") {
        const auto m = refine::run_eval(ctx);
        std::printf("%s: %.4f +/- %.4f over %zu seeds\n", m["metric"].get<std::string>().c_str(),
                    m["mean"].get<double>(), m["std"].get<double>(), m["per_seed"].size());
        return refine::exit_ok;
    }
    auto gateway = refine::make_gateway(ctx);
    const int code = refine::run_pipeline(ctx, *gateway);
    if (code == refine::exit_ok) std::printf("pipeline complete: %s\n", ctx.artifact("summary.json").c_str());
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Rule-guided synthetic tabular data generation with redundancy-aware filtering"};
    app.require_subcommand(1);
    Overrides o;
    for (const char* name : {"rules", "generate", "filter", "eval", "pipeline"}) {
        add_common(app.add_subcommand(name), o);
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : refine::exit_input;
    }
    const std::string command = app.get_subcommands().front()->get_name();
    try {
        return run(command, o);
    } catch (const std::exception& e) {
        return refine::report_failure(e);
    }
}
