#pragma once

// Chat-completions transport, prompt templates, reply parsing and the
// deterministic rule-conditioned mock backend.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <semaphore>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "refine/dataset.hpp"
#include "refine/error.hpp"
#include "refine/random.hpp"
#include "refine/rules.hpp"

namespace refine {

enum class Backend { http, mock };

struct GatewayConfig {
    std::string endpoint = "https://api.openai.com/v1";
    std::string model = "gpt-3.5-turbo-1106";
    /// Sampling temperature for row generation.
    double temperature = 0.7;
    /// Sampling temperature for the symbolic merge and aggregation prompts.
    double merge_temperature = 0.0;
    int max_tokens = 4096;
    double timeout_s = 120;
    int retries = 3;
    /// First retry delay; doubles on every further attempt.
    double backoff_ms = 500;
    std::string api_key_env = "REFINE_API_KEY";
    Backend backend = Backend::mock;
    std::size_t parallelism = 4;
    /// JSONL transcript of every exchange; empty disables it.
    std::string transcript;

    bool operator==(const GatewayConfig&) const = default;

    void validate() const {
        if (retries < 0) throw ConfigError("gateway retries must be >= 0");
        if (!(timeout_s > 0)) throw ConfigError("gateway timeout must be positive");
        if (parallelism < 1) throw ConfigError("gateway parallelism must be >= 1");
        if (backend == Backend::http && endpoint.empty()) throw ConfigError("gateway endpoint is empty");
    }
};

// --- prompt templates --------------------------------------------------------------

enum class PromptKind { merge, aggregate, generate };

struct PromptTemplate {
    PromptKind kind = PromptKind::generate;
    std::string body;

    /// Substitute {name} placeholders; every placeholder must have a value.
    std::string render(const std::map<std::string, std::string>& values) const {
        std::string out;
        std::size_t i = 0;
        while (i < body.size()) {
            const auto open = body.find('{', i);
            if (open == std::string::npos) {
                out.append(body, i, std::string::npos);
                break;
            }
            const auto close = body.find('}', open);
            out.append(body, i, open - i);
            if (close == std::string::npos) {
                out.append(body, open, std::string::npos);
                break;
            }
            const auto name = body.substr(open + 1, close - open - 1);
            const bool identifier = !name.empty() && std::all_of(name.begin(), name.end(), [](char c) {
                return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
            });
            if (!identifier) {
                out.push_back('{');
                i = open + 1;
                continue;
            }
            const auto it = values.find(name);
            if (it == values.end()) throw ConfigError("prompt placeholder {" + name + "} has no value");
            out += it->second;
            i = close + 1;
        }
        return out;
    }
};

inline PromptTemplate default_template(PromptKind kind) {
    switch (kind) {
        case PromptKind::merge:
            return {kind,
                    "You are given decision paths (if-else rules) taken from the most accurate trees of a "
                    "random forest trained on a small tabular dataset.\n\n"
                    "Columns:\n{schema_description}\n"
                    "Decision paths:\n{rules}\n"
                    "Merge the paths into exactly one rule per value of {target}. For each target value, "
                    "generalize similar feature intervals into a single interval per feature, and keep the "
                    "intervals of different target values non-overlapping. Use only the operators <, <=, >, "
                    ">=, =.\n"
                    "Answer with one line per target value and nothing else, in the form:\n"
                    "If [Target]=t, Then feature op value and feature op value\n"};
        case PromptKind::aggregate:
            return {kind,
                    "Below are several independently merged rule sets for the same tabular dataset.\n\n"
                    "Columns:\n{schema_description}\n"
                    "Rule sets:\n{rules}\n"
                    "Produce one consensus rule per value of {target}. Keep only conditions that appear in at "
                    "least half of the rule sets and average their bounds.\n"
                    "Answer with one line per target value and nothing else, in the form:\n"
                    "If [Target]=t, Then feature op value and feature op value\n"};
        case PromptKind::generate:
            return {kind,
                    "You are generating realistic synthetic rows for a tabular dataset.\n\n"
                    "Columns:\n{schema_description}\n"
                    "Every row must have {target}.\n"
                    "Guidance:\n{rules}\n\n"
                    "Output exactly {batch_size} rows in CSV format. Start with the header line, then one row "
                    "per line, and output nothing else.\n"};
    }
    return {kind, ""};
}

inline std::string describe_schema(const Schema& schema) {
    std::string out;
    for (std::size_t c = 0; c < schema.columns.size(); ++c) {
        const auto& col = schema.columns[c];
        out += "- " + col.name + " (" + (col.kind == ColumnKind::numeric ? "numeric" : "categorical");
        if (c == schema.target) out += ", target";
        out += ")";
        if (!col.description.empty()) out += ": " + col.description;
        if (col.kind == ColumnKind::categorical && !col.categories.empty()) {
            out += " [values: ";
            for (std::size_t i = 0; i < col.categories.size(); ++i) {
                if (i) out += ", ";
                out += col.categories[i];
            }
            out += "]";
        }
        out += "\n";
    }
    return out;
}

inline std::string target_assignment(const RuleTarget& t, const Schema& schema) {
    if (const auto* label = std::get_if<std::string>(&t)) return schema.target_name() + " = " + *label;
    const auto& iv = std::get<Interval>(t);
    return schema.target_name() + " in [" + csv::format_number(iv.lo) + ", " + csv::format_number(iv.hi) + "]";
}

enum class RuleForm { ifthen, natural };

inline std::string build_generation_prompt(const Rule& rule, const Schema& schema, std::size_t batch,
                                           const PromptTemplate& tpl = default_template(PromptKind::generate),
                                           RuleForm form = RuleForm::ifthen) {
    if (batch < 1) throw InputError("generation batch must be >= 1");
    return tpl.render({{"schema_description", describe_schema(schema)},
                       {"rules", form == RuleForm::ifthen ? render_rule(rule, schema)
                                                          : render_rule_natural(rule, schema)},
                       {"batch_size", std::to_string(batch)},
                       {"target", target_assignment(rule.target, schema)}});
}

/// Rule-free variant: the guidance is a few example rows of the target.
inline std::string build_fewshot_prompt(const RuleTarget& target, const Dataset& examples, std::size_t batch,
                                        const PromptTemplate& tpl = default_template(PromptKind::generate)) {
    if (batch < 1) throw InputError("generation batch must be >= 1");
    std::string shots = "Example rows from the real data:\n" + to_csv(examples);
    if (!shots.empty() && shots.back() == '\n') shots.pop_back();
    return tpl.render({{"schema_description", describe_schema(examples.schema)},
                       {"rules", shots},
                       {"batch_size", std::to_string(batch)},
                       {"target", target_assignment(target, examples.schema)}});
}

inline std::string build_merge_prompt(const std::vector<TargetPaths>& groups, const Schema& schema,
                                      const PromptTemplate& tpl = default_template(PromptKind::merge)) {
    std::string paths;
    for (const auto& g : groups) {
        for (const auto& p : g.paths) paths += render_path(p, g.target, schema) + "\n";
    }
    return tpl.render({{"schema_description", describe_schema(schema)},
                       {"rules", paths},
                       {"batch_size", ""},
                       {"target", schema.target_name()}});
}

inline std::string build_aggregate_prompt(const std::vector<RuleSet>& runs, const Schema& schema,
                                          const PromptTemplate& tpl = default_template(PromptKind::aggregate)) {
    std::string body;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        body += "Run " + std::to_string(i + 1) + ":\n" + render_rules(runs[i], schema);
    }
    return tpl.render({{"schema_description", describe_schema(schema)},
                       {"rules", body},
                       {"batch_size", ""},
                       {"target", schema.target_name()}});
}

// --- transport ----------------------------------------------------------------------

using Responder = std::function<std::string(std::string_view prompt)>;

class Gateway {
public:
    explicit Gateway(GatewayConfig config, Responder mock = {})
        : config_(std::move(config)), mock_(std::move(mock)), slots_(static_cast<std::ptrdiff_t>(config_.parallelism)) {
        config_.validate();
    }

    const GatewayConfig& config() const { return config_; }

    void set_responder(Responder r) { mock_ = std::move(r); }

    /// Throws ConfigError if a call could not even be attempted.
    void check_ready() const {
        if (config_.backend == Backend::http) {
            api_key();
        } else if (!mock_) {
            throw ConfigError("mock backend has no responder registered");
        }
    }

    std::string complete(std::string_view prompt) { return complete(prompt, config_.temperature); }

    /// Send one user message and return the assistant text.
    std::string complete(std::string_view prompt, double temperature) {
        check_ready();
        slots_.acquire();
        struct Release {
            std::counting_semaphore<>& s;
            ~Release() { s.release(); }
        } release{slots_};
        std::string reply =
            config_.backend == Backend::mock ? mock_(prompt) : http_complete(prompt, temperature);
        log(prompt, reply, temperature);
        return reply;
    }

private:
    std::string api_key() const {
        const char* key = std::getenv(config_.api_key_env.c_str());
        if (!key || !*key) throw ConfigError("environment variable " + config_.api_key_env + " is not set");
        return key;
    }

    std::string http_complete(std::string_view prompt, double temperature) {
        const std::string key = api_key();
        static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
        std::smatch m;
        if (!std::regex_match(config_.endpoint, m, url_re)) {
            throw ConfigError("endpoint '" + config_.endpoint + "' is not an http(s) URL");
        }
        const std::string base = m[1].str();
        std::string path = m[2].matched ? m[2].str() : "";
        while (!path.empty() && path.back() == '/') path.pop_back();
        path += "/chat/completions";

        const nlohmann::json request{{"model", config_.model},
                                     {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
                                     {"temperature", temperature},
                                     {"max_tokens", config_.max_tokens}};
        const std::string body = request.dump();

        std::string last_error;
        for (int attempt = 0; attempt <= config_.retries; ++attempt) {
            if (attempt > 0) {
                const double delay = config_.backoff_ms * std::pow(2.0, attempt - 1);
                std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(delay));
            }
            httplib::Client client(base);
            const auto secs = std::chrono::duration<double>(config_.timeout_s);
            client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(secs));
            client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(secs));
            client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(secs));
            client.set_bearer_token_auth(key);
            const auto res = client.Post(path, body, "application/json");
            if (!res) {
                last_error = "transport error: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status >= 200 && res->status < 300) {
                try {
                    const auto reply = nlohmann::json::parse(res->body);
                    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
                } catch (const nlohmann::json::exception& e) {
                    throw TransportError(std::string("malformed completion response: ") + e.what());
                }
            }
            last_error = "HTTP " + std::to_string(res->status) + ": " + res->body;
            const bool transient = res->status == 429 || res->status == 408 || res->status >= 500;
            if (!transient) throw TransportError(last_error);
        }
        throw TransportError("completion failed after " + std::to_string(config_.retries + 1) +
                             " attempts; last error: " + last_error);
    }

    void log(std::string_view prompt, const std::string& reply, double temperature) {
        if (config_.transcript.empty()) return;
        const nlohmann::json line{{"backend", config_.backend == Backend::mock ? "mock" : "http"},
                                  {"model", config_.model},
                                  {"temperature", temperature},
                                  {"prompt", prompt},
                                  {"reply", reply}};
        std::lock_guard lock(transcript_mutex_);
        std::ofstream out(config_.transcript, std::ios::app);
        out << line.dump() << '\n';
    }

    GatewayConfig config_;
    Responder mock_;
    std::counting_semaphore<> slots_;
    std::mutex transcript_mutex_;
};

// --- reply parsing ------------------------------------------------------------------

struct RowReject {
    std::size_t line = 0;  ///< 1-based line in the reply
    std::string reason;
};

struct ParsedBatch {
    std::vector<Row> accepted;
    std::vector<RowReject> rejects;
    bool header_found = false;

    std::size_t attempted() const { return accepted.size() + rejects.size(); }
};

/// Extract typed rows from a model reply. Rows are kept in schema order.
/// Reject reasons: "arity", "missing", "type", "vocabulary", "target mismatch".
inline ParsedBatch parse_rows(std::string_view reply, const Schema& schema, const RuleTarget& expected) {
    ParsedBatch out;
    std::vector<std::size_t> position;  // schema column -> field position
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start < reply.size()) {
        auto end = reply.find('\n', start);
        if (end == std::string_view::npos) end = reply.size();
        std::string_view line = reply.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        const auto trimmed = csv::trim(line);
        if (trimmed.empty() || trimmed.starts_with("```")) continue;

        std::vector<csv::Record> recs;
        try {
            recs = csv::read(trimmed);
        } catch (const CsvError&) {
            if (out.header_found) out.rejects.push_back({line_no, "arity"});
            continue;
        }
        if (recs.size() != 1) continue;
        auto& fields = recs.front();
        for (auto& f : fields) f = std::string(csv::trim(f));

        if (!out.header_found) {
            if (fields.size() != schema.columns.size()) continue;
            std::vector<std::size_t> pos(schema.columns.size());
            bool ok = true;
            for (std::size_t c = 0; c < schema.columns.size() && ok; ++c) {
                const auto it = std::find(fields.begin(), fields.end(), schema.columns[c].name);
                ok = it != fields.end();
                if (ok) pos[c] = static_cast<std::size_t>(it - fields.begin());
            }
            if (ok && std::set<std::string>(fields.begin(), fields.end()).size() == fields.size()) {
                out.header_found = true;
                position = std::move(pos);
            }
            continue;
        }

        if (fields.size() != schema.columns.size()) {
            out.rejects.push_back({line_no, "arity"});
            continue;
        }
        Row row(schema.columns.size());
        std::optional<std::string> reason;
        for (std::size_t c = 0; c < schema.columns.size() && !reason; ++c) {
            const auto& text = fields[position[c]];
            if (text.empty()) {
                reason = "missing";
                break;
            }
            if (auto err = detail::convert_cell(schema.columns[c], text, row[c], c == schema.target)) {
                reason = err->starts_with("vocabulary") ? "vocabulary" : "type";
            }
        }
        if (!reason) {
            const auto& t = row[schema.target];
            if (const auto* label = std::get_if<std::string>(&expected)) {
                if (std::get<std::string>(t) != *label) reason = "target mismatch";
            } else if (!std::get<Interval>(expected).contains(std::get<double>(t))) {
                reason = "target mismatch";
            }
        }
        if (reason) {
            out.rejects.push_back({line_no, *reason});
        } else {
            out.accepted.push_back(std::move(row));
        }
    }
    return out;
}

// --- mock backend ----------------------------------------------------------------------

struct MockOptions {
    std::uint64_t seed = 0;
    /// Seed for the anchor rows; anchors stay fixed across calls that share it.
    std::optional<std::uint64_t> anchor_seed;
    /// Fraction of rows copied (with jitter) from the anchor set.
    double redundancy_profile = 0.0;
    std::size_t anchors = 3;
    /// Jitter half-width as a fraction of each feature's sampling range.
    double jitter = 0.01;
};

namespace detail {

struct SamplingRange {
    double lo = 0, hi = 0;
    bool lo_strict = false, hi_strict = false;

    double clamp(double v) const {
        v = std::clamp(v, lo, hi);
        if (lo_strict && v <= lo) v = std::nextafter(lo, hi);
        if (hi_strict && v >= hi) v = std::nextafter(hi, lo);
        return v;
    }
};

inline SamplingRange sampling_range(const Rule& rule, const Column& col, const NumericStats& st) {
    const auto box = feature_box(rule, col.name);
    if (box.empty()) throw InputError("unsatisfiable rule on '" + col.name + "'");
    SamplingRange r{st.min, st.max, false, false};
    const double spread = std::max(st.max - st.min, 1e-6);
    const bool has_lo = std::isfinite(box.lo), has_hi = std::isfinite(box.hi);
    if (has_lo) {
        r.lo = box.lo;
        r.lo_strict = box.lo_strict;
    }
    if (has_hi) {
        r.hi = box.hi;
        r.hi_strict = box.hi_strict;
    }
    if (r.lo > r.hi || (r.lo == r.hi && (r.lo_strict || r.hi_strict))) {
        // Rule bound outside the observed range: open a window beyond it.
        if (has_lo && !has_hi) {
            r.hi = r.lo + 0.1 * spread;
        } else if (has_hi && !has_lo) {
            r.lo = r.hi - 0.1 * spread;
        }
    }
    return r;
}

inline Row sample_row(const Rule& rule, const Schema& schema, const ColumnStats& stats, Rng& rng) {
    Row row(schema.columns.size());
    for (std::size_t c = 0; c < schema.columns.size(); ++c) {
        const auto& col = schema.columns[c];
        if (c == schema.target) {
            if (const auto* label = std::get_if<std::string>(&rule.target)) {
                row[c] = *label;
            } else {
                const auto& iv = std::get<Interval>(rule.target);
                row[c] = rng.uniform(iv.lo, iv.hi);
            }
            continue;
        }
        if (col.kind == ColumnKind::numeric) {
            const auto r = sampling_range(rule, col, *stats.numeric.at(c));
            row[c] = r.clamp(rng.uniform(r.lo, r.hi));
            continue;
        }
        std::optional<std::string> fixed;
        for (const auto& cond : rule.conditions) {
            if (cond.feature == col.name && cond.op == Op::eq) fixed = std::get<std::string>(cond.value);
        }
        if (fixed) {
            row[c] = *fixed;
        } else if (!col.categories.empty()) {
            row[c] = col.categories[rng.below(col.categories.size())];
        } else {
            row[c] = std::string("unknown");
        }
    }
    return row;
}

}  // namespace detail

/// Emit a CSV reply of n rows drawn inside the rule's feature box (column
/// ranges where unconstrained). A `redundancy_profile` share of the rows are
/// jittered copies of a few anchor rows, which mimics a model collapsing onto
/// a handful of modes under a reused prompt.
inline std::string mock_generate(const Rule& rule, const Schema& schema, const ColumnStats& stats, std::size_t n,
                                 const MockOptions& opt) {
    for (const auto& col : schema.columns) {
        if (col.kind == ColumnKind::numeric) {
            const auto box = feature_box(rule, col.name);
            if (box.empty()) throw InputError("unsatisfiable rule on '" + col.name + "'");
        }
    }
    Rng anchor_rng(derive_seed(opt.anchor_seed.value_or(opt.seed), 0xA11C));
    std::vector<Row> anchors;
    for (std::size_t a = 0; a < std::max<std::size_t>(opt.anchors, 1); ++a) {
        anchors.push_back(detail::sample_row(rule, schema, stats, anchor_rng));
    }

    Rng rng(derive_seed(opt.seed, 0x5EED));
    const auto redundant = static_cast<std::size_t>(
        std::llround(std::clamp(opt.redundancy_profile, 0.0, 1.0) * static_cast<double>(n)));
    std::vector<char> is_redundant(n, 0);
    std::fill(is_redundant.begin(), is_redundant.begin() + static_cast<std::ptrdiff_t>(redundant), 1);
    rng.shuffle(is_redundant);

    std::string out;
    csv::Record header;
    for (const auto& c : schema.columns) header.push_back(c.name);
    csv::append_record(out, header);
    csv::Record rec(schema.columns.size());
    for (std::size_t i = 0; i < n; ++i) {
        Row row;
        if (is_redundant[i]) {
            row = anchors[rng.below(anchors.size())];
            for (std::size_t c = 0; c < schema.columns.size(); ++c) {
                if (c == schema.target || schema.columns[c].kind != ColumnKind::numeric) continue;
                const auto r = detail::sampling_range(rule, schema.columns[c], *stats.numeric.at(c));
                const double width = r.hi - r.lo;
                row[c] = r.clamp(std::get<double>(row[c]) + rng.uniform(-1.0, 1.0) * opt.jitter * width);
            }
        } else {
            row = detail::sample_row(rule, schema, stats, rng);
        }
        for (std::size_t c = 0; c < row.size(); ++c) rec[c] = cell_text(row[c]);
        csv::append_record(out, rec);
    }
    return out;
}

/// Deterministic stand-in for a chat model. Understands the default merge
/// and generation templates:
///  - merge prompts: decision paths are parsed back and merged deterministically;
///  - generation prompts: rows come from mock_generate on the embedded if-then
///    rule, or on an unconstrained rule when the prompt carries no parseable
///    rule (few-shot or natural-language guidance).
/// Calls with an identical prompt get successive seeds, so repeated batches
/// differ while a full run stays reproducible.
class MockResponder {
public:
    MockResponder(Schema schema, ColumnStats stats, MockOptions options)
        : state_(std::make_shared<State>(std::move(schema), std::move(stats), options)) {}

    std::string operator()(std::string_view prompt) const {
        if (prompt.find("Decision paths:") != std::string_view::npos) return merge(prompt);
        static const std::regex rows_re(R"(exactly (\d+) rows)");
        const std::string text(prompt);
        std::smatch m;
        if (!std::regex_search(text, m, rows_re)) return "";
        const auto n = static_cast<std::size_t>(std::stoull(m[1].str()));

        const auto& schema = state_->schema;
        std::optional<Rule> rule;
        auto block = parse_rule_block(prompt, schema);
        if (!block.rules.empty()) rule = block.rules.front();
        std::string anchor_key;
        if (rule) {
            anchor_key = render_rule(*rule, schema);
        } else {
            const auto target = prompt_target(text);
            if (!target) return "";
            rule = Rule{*target, {}};
            anchor_key = target_text(*target);
        }

        const std::uint64_t key = fnv1a(prompt);
        std::uint64_t call = 0;
        {
            std::lock_guard lock(state_->mutex);
            call = state_->calls[key]++;
        }
        MockOptions opt = state_->options;
        opt.anchor_seed = derive_seed(state_->options.seed, fnv1a(anchor_key));
        opt.seed = derive_seed(derive_seed(state_->options.seed, key), call);
        return mock_generate(*rule, schema, state_->stats, n, opt);
    }

private:
    struct State {
        State(Schema s, ColumnStats st, MockOptions o) : schema(std::move(s)), stats(std::move(st)), options(o) {}

        Schema schema;
        ColumnStats stats;
        MockOptions options;
        std::map<std::uint64_t, std::uint64_t> calls;
        std::mutex mutex;
    };

    std::optional<RuleTarget> prompt_target(const std::string& text) const {
        const auto& schema = state_->schema;
        const std::string marker = "Every row must have " + schema.target_name();
        const auto pos = text.find(marker);
        if (pos == std::string::npos) return std::nullopt;
        auto end = text.find('\n', pos);
        std::string rest = text.substr(pos + marker.size(), end == std::string::npos ? end : end - pos - marker.size());
        if (!rest.empty() && rest.back() == '.') rest.pop_back();
        std::vector<std::string> warnings;
        return detail::parse_target("[" + schema.target_name() + "]" + rest, schema, warnings);
    }

    std::string merge(std::string_view prompt) const {
        const auto& schema = state_->schema;
        std::vector<TargetPaths> groups;
        std::size_t start = 0;
        while (start < prompt.size()) {
            auto end = prompt.find('\n', start);
            if (end == std::string_view::npos) end = prompt.size();
            const auto line = prompt.substr(start, end - start);
            start = end + 1;
            auto parsed = parse_path(line, schema);
            if (!parsed) continue;
            auto it = std::find_if(groups.begin(), groups.end(),
                                   [&](const TargetPaths& g) { return g.target == parsed->target; });
            if (it == groups.end()) {
                groups.push_back({parsed->target, {}});
                it = groups.end() - 1;
            }
            it->paths.push_back(std::move(parsed->path));
        }
        if (groups.empty()) return "";
        return render_rules(merge_deterministic(groups, schema, &state_->stats), schema);
    }

    std::shared_ptr<State> state_;
};

// --- LLM merge ------------------------------------------------------------------------

struct LlmMergeOutcome {
    RuleSet rules;
    std::vector<std::string> warnings;
    /// Targets whose rule came from the deterministic merger.
    std::size_t fallbacks = 0;
};

/// Merge paths through the model. Conditions that fail schema checks are
/// dropped; a target left without a rule (or with an empty one) takes the
/// deterministic merge result instead.
inline LlmMergeOutcome merge_llm(const std::vector<TargetPaths>& groups, const Schema& schema,
                                 const ColumnStats* stats, Gateway& gateway,
                                 const PromptTemplate& tpl = default_template(PromptKind::merge)) {
    const std::string reply = gateway.complete(build_merge_prompt(groups, schema, tpl),
                                               gateway.config().merge_temperature);
    auto parsed = parse_rule_block(reply, schema);
    LlmMergeOutcome out;
    out.warnings = std::move(parsed.warnings);
    std::optional<RuleSet> fallback;
    out.rules.provenance = RuleProvenance::llm;
    for (const auto& g : groups) {
        auto it = std::find_if(parsed.rules.begin(), parsed.rules.end(),
                               [&](const Rule& r) { return r.target == g.target; });
        if (it != parsed.rules.end() && !it->conditions.empty()) {
            out.rules.rules.push_back(*it);
            continue;
        }
        if (!fallback) fallback = merge_deterministic(groups, schema, stats);
        out.rules.rules.push_back(*fallback->find(g.target));
        out.warnings.push_back("no usable merged rule for " + target_text(g.target) + "; using deterministic merge");
        ++out.fallbacks;
    }
    if (out.fallbacks == groups.size()) out.rules.provenance = RuleProvenance::deterministic;
    return out;
}

}  // namespace refine
