#pragma once

// Declarative pipeline configuration (versioned JSON).

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "refine/boosting.hpp"
#include "refine/dataset.hpp"
#include "refine/filter.hpp"
#include "refine/generator.hpp"
#include "refine/llm.hpp"

namespace refine {

inline constexpr int config_version = 1;

struct PipelineConfig {
    int version = config_version;
    std::string dataset;
    /// Schema sidecar; when empty the schema is inferred with `target`.
    std::string schema;
    std::string target;
    /// Optional separate real test set; otherwise the rows left after the split.
    std::string test_dataset;
    std::size_t n_train = 30;
    std::uint64_t split_seed = 0;
    /// Seeds the forests, the mock model, chunk shuffling and few-shot picks.
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    std::string out_dir = "out";

    ForestParams forest;
    std::size_t g = 5;
    std::size_t k = 3;
    std::size_t num_intervals = 3;
    MergeMode merge = MergeMode::deterministic;
    RuleForm rule_form = RuleForm::ifthen;
    bool skip_rules = false;
    std::size_t fewshot_examples = 5;

    std::size_t total = 2000;
    std::size_t batch_size = 50;
    std::size_t max_attempts = 100;

    GatewayConfig gateway;
    double mock_redundancy = 0.0;
    std::size_t mock_anchors = 3;
    double mock_jitter = 0.01;

    double A = 0.15;
    double B = 0.55;
    std::vector<std::size_t> chunk_candidates = {20, 25, 30, 35, 40, 45, 50, 55, 60};
    RedundancyMetric filter_metric = RedundancyMetric::gini;
    bool skip_filter = false;

    BoostParams refmodel;

    std::vector<std::uint64_t> eval_seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::size_t eval_sample_size = 1000;

    bool operator==(const PipelineConfig&) const = default;

    /// Range checks; with `check_files`, every referenced input must exist.
    void validate(bool check_files = true) const {
        if (version != config_version) {
            throw ConfigError("unsupported config version " + std::to_string(version));
        }
        if (dataset.empty()) throw ConfigError("config names no dataset");
        if (check_files) {
            for (const auto* p : {&dataset, &schema, &test_dataset}) {
                if (!p->empty() && !std::filesystem::is_regular_file(*p)) {
                    throw ConfigError("file not found: '" + *p + "'");
                }
            }
        }
        if (n_train < 1) throw ConfigError("n_train must be >= 1");
        if (jobs < 1) throw ConfigError("jobs must be >= 1");
        if (out_dir.empty()) throw ConfigError("out_dir is empty");
        if (!std::isfinite(A) || !std::isfinite(B)) throw ConfigError("filter coefficients A and B must be finite");
        if (!(mock_redundancy >= 0 && mock_redundancy <= 1)) throw ConfigError("mock redundancy must be in [0, 1]");
        if (eval_seeds.empty()) throw ConfigError("eval.seeds must not be empty");
        if (eval_sample_size < 1) throw ConfigError("eval.sample_size must be >= 1");
        plan().validate();
        filter_params().validate();
        gateway.validate();
        try {
            refmodel.validate();
        } catch (const InputError& e) {
            throw ConfigError(e.what());
        }
    }

    GenerationPlan plan() const {
        GenerationPlan p;
        p.total_target = total;
        p.forest = forest;
        p.forest.seed = seed;
        p.g = g;
        p.k = k;
        p.max_attempts = max_attempts;
        p.batch_size = batch_size;
        p.num_intervals = num_intervals;
        p.merge = merge;
        p.rule_form = rule_form;
        p.skip_rules = skip_rules;
        p.fewshot_examples = fewshot_examples;
        p.seed = seed;
        return p;
    }

    FilterParams filter_params() const {
        return {A, B, chunk_candidates, seed, filter_metric};
    }

    MockOptions mock_options() const {
        MockOptions m;
        m.seed = seed;
        m.redundancy_profile = mock_redundancy;
        m.anchors = mock_anchors;
        m.jitter = mock_jitter;
        return m;
    }
};

inline nlohmann::json config_to_json(const PipelineConfig& c) {
    const auto& gw = c.gateway;
    return {{"version", c.version},
            {"dataset", c.dataset},
            {"schema", c.schema},
            {"target", c.target},
            {"test_dataset", c.test_dataset},
            {"n_train", c.n_train},
            {"split_seed", c.split_seed},
            {"seed", c.seed},
            {"jobs", c.jobs},
            {"out_dir", c.out_dir},
            {"forest",
             {{"num_trees", c.forest.num_trees},
              {"max_depth", c.forest.max_depth},
              {"min_leaf", c.forest.min_leaf},
              {"features_per_split", c.forest.features_per_split},
              {"bootstrap", c.forest.bootstrap}}},
            {"rules",
             {{"g", c.g},
              {"k", c.k},
              {"num_intervals", c.num_intervals},
              {"merge", merge_mode_name(c.merge)},
              {"rule_form", rule_form_name(c.rule_form)},
              {"skip_rules", c.skip_rules},
              {"fewshot_examples", c.fewshot_examples}}},
            {"generation", {{"total", c.total}, {"batch_size", c.batch_size}, {"max_attempts", c.max_attempts}}},
            {"gateway",
             {{"backend", gw.backend == Backend::mock ? "mock" : "http"},
              {"endpoint", gw.endpoint},
              {"model", gw.model},
              {"temperature", gw.temperature},
              {"merge_temperature", gw.merge_temperature},
              {"max_tokens", gw.max_tokens},
              {"timeout_s", gw.timeout_s},
              {"retries", gw.retries},
              {"backoff_ms", gw.backoff_ms},
              {"api_key_env", gw.api_key_env},
              {"parallelism", gw.parallelism},
              {"transcript", gw.transcript}}},
            {"mock", {{"redundancy_profile", c.mock_redundancy}, {"anchors", c.mock_anchors}, {"jitter", c.mock_jitter}}},
            {"filter",
             {{"A", c.A},
              {"B", c.B},
              {"chunk_candidates", c.chunk_candidates},
              {"metric", metric_name(c.filter_metric)},
              {"skip", c.skip_filter}}},
            {"refmodel",
             {{"rounds", c.refmodel.rounds},
              {"learning_rate", c.refmodel.learning_rate},
              {"max_depth", c.refmodel.max_depth},
              {"lambda", c.refmodel.lambda},
              {"min_leaf", c.refmodel.min_leaf},
              {"max_bins", c.refmodel.max_bins}}},
            {"eval", {{"seeds", c.eval_seeds}, {"sample_size", c.eval_sample_size}}}};
}

namespace detail {

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

inline Backend parse_backend(std::string_view s) {
    if (s == "mock") return Backend::mock;
    if (s == "http") return Backend::http;
    throw ConfigError("unknown backend '" + std::string(s) + "' (expected http or mock)");
}

}  // namespace detail

/// Missing keys keep their defaults; unknown sections are rejected.
inline PipelineConfig config_from_json(const nlohmann::json& j) {
    using detail::read_opt;
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    static const std::vector<std::string> known = {
        "version", "dataset",  "schema", "target", "test_dataset", "n_train",    "split_seed", "seed",
        "jobs",    "out_dir",  "forest", "rules",  "generation",   "gateway",    "mock",       "filter",
        "refmodel", "eval"};
    for (const auto& [key, value] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
    PipelineConfig c;
    try {
        if (!j.contains("version")) throw ConfigError("config has no \"version\" field");
        c.version = j.at("version").get<int>();
        read_opt(j, "dataset", c.dataset);
        read_opt(j, "schema", c.schema);
        read_opt(j, "target", c.target);
        read_opt(j, "test_dataset", c.test_dataset);
        read_opt(j, "n_train", c.n_train);
        read_opt(j, "split_seed", c.split_seed);
        read_opt(j, "seed", c.seed);
        read_opt(j, "jobs", c.jobs);
        read_opt(j, "out_dir", c.out_dir);
        if (j.contains("forest")) {
            const auto& f = j["forest"];
            read_opt(f, "num_trees", c.forest.num_trees);
            read_opt(f, "max_depth", c.forest.max_depth);
            read_opt(f, "min_leaf", c.forest.min_leaf);
            read_opt(f, "features_per_split", c.forest.features_per_split);
            read_opt(f, "bootstrap", c.forest.bootstrap);
        }
        if (j.contains("rules")) {
            const auto& r = j["rules"];
            read_opt(r, "g", c.g);
            read_opt(r, "k", c.k);
            read_opt(r, "num_intervals", c.num_intervals);
            if (r.contains("merge")) c.merge = parse_merge_mode(r["merge"].get<std::string>());
            if (r.contains("rule_form")) c.rule_form = parse_rule_form(r["rule_form"].get<std::string>());
            read_opt(r, "skip_rules", c.skip_rules);
            read_opt(r, "fewshot_examples", c.fewshot_examples);
        }
        if (j.contains("generation")) {
            const auto& g = j["generation"];
            read_opt(g, "total", c.total);
            read_opt(g, "batch_size", c.batch_size);
            read_opt(g, "max_attempts", c.max_attempts);
        }
        if (j.contains("gateway")) {
            const auto& g = j["gateway"];
            auto& gw = c.gateway;
            if (g.contains("backend")) gw.backend = detail::parse_backend(g["backend"].get<std::string>());
            read_opt(g, "endpoint", gw.endpoint);
            read_opt(g, "model", gw.model);
            read_opt(g, "temperature", gw.temperature);
            read_opt(g, "merge_temperature", gw.merge_temperature);
            read_opt(g, "max_tokens", gw.max_tokens);
            read_opt(g, "timeout_s", gw.timeout_s);
            read_opt(g, "retries", gw.retries);
            read_opt(g, "backoff_ms", gw.backoff_ms);
            read_opt(g, "api_key_env", gw.api_key_env);
            read_opt(g, "parallelism", gw.parallelism);
            read_opt(g, "transcript", gw.transcript);
        }
        if (j.contains("mock")) {
            const auto& m = j["mock"];
            read_opt(m, "redundancy_profile", c.mock_redundancy);
            read_opt(m, "anchors", c.mock_anchors);
            read_opt(m, "jitter", c.mock_jitter);
        }
        if (j.contains("filter")) {
            const auto& f = j["filter"];
            read_opt(f, "A", c.A);
            read_opt(f, "B", c.B);
            read_opt(f, "chunk_candidates", c.chunk_candidates);
            if (f.contains("metric")) c.filter_metric = parse_redundancy_metric(f["metric"].get<std::string>());
            read_opt(f, "skip", c.skip_filter);
        }
        if (j.contains("refmodel")) {
            const auto& r = j["refmodel"];
            read_opt(r, "rounds", c.refmodel.rounds);
            read_opt(r, "learning_rate", c.refmodel.learning_rate);
            read_opt(r, "max_depth", c.refmodel.max_depth);
            read_opt(r, "lambda", c.refmodel.lambda);
            read_opt(r, "min_leaf", c.refmodel.min_leaf);
            read_opt(r, "max_bins", c.refmodel.max_bins);
        }
        if (j.contains("eval")) {
            const auto& e = j["eval"];
            read_opt(e, "seeds", c.eval_seeds);
            read_opt(e, "sample_size", c.eval_sample_size);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    return c;
}

inline std::string save_config(const PipelineConfig& c) { return config_to_json(c).dump(2) + "\n"; }

/// Parse and validate a config file (referenced inputs must exist).
inline PipelineConfig load_config(const std::string& path, bool check_files = true) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
    }
    auto c = config_from_json(j);
    c.validate(check_files);
    return c;
}

}  // namespace refine
