#pragma once

// Redundancy-aware filtering of synthetic rows: nearest-seed proxy
// distribution, Gini redundancy, frequency partitioning, chunk-level and
// instance-level filtering, and chunk-size selection by surprisal.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "refine/boosting.hpp"
#include "refine/dataset.hpp"
#include "refine/encoding.hpp"
#include "refine/parallel.hpp"
#include "refine/random.hpp"

namespace refine {

// --- distance ------------------------------------------------------------------------

/// Gower-style distance over feature columns: numeric |a-b| / range (0 for
/// a zero range), categorical 0/1, averaged. The target column is skipped.
inline double dcr(const Row& a, const Row& b, const Schema& schema, const ColumnStats& stats) {
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < schema.columns.size(); ++c) {
        if (c == schema.target) continue;
        ++n;
        if (schema.columns[c].kind == ColumnKind::numeric) {
            const double range = stats.range(c);
            if (range > 0) sum += std::abs(std::get<double>(a[c]) - std::get<double>(b[c])) / range;
        } else {
            sum += std::get<std::string>(a[c]) == std::get<std::string>(b[c]) ? 0.0 : 1.0;
        }
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

// --- redundancy scores ---------------------------------------------------------------

/// Gini coefficient of a frequency vector: sum over ascending order of
/// (2j - n - 1) p_(j), divided by n - 1. Zero for n = 1; clamped to [0, 1].
inline double gini(std::span<const double> p) {
    for (double v : p) {
        if (v < 0) throw InputError("gini needs non-negative frequencies");
    }
    const std::size_t n = p.size();
    if (n <= 1) return 0.0;
    std::vector<double> s(p.begin(), p.end());
    std::sort(s.begin(), s.end());
    // Terms j and n+1-j share a weight of opposite sign; pairing them keeps
    // equal frequencies at exactly zero.
    double acc = 0;
    for (std::size_t j = 1; 2 * j < n + 1; ++j) {
        acc += static_cast<double>(n + 1 - 2 * j) * (s[n - j] - s[j - 1]);
    }
    return std::clamp(acc / static_cast<double>(n - 1), 0.0, 1.0);
}

/// 1 - H(p) / ln n: zero for a uniform vector, one for a point mass.
inline double entropy_redundancy(std::span<const double> p) {
    const std::size_t n = p.size();
    if (n <= 1) return 0.0;
    double h = 0;
    for (double v : p) {
        if (v < 0) throw InputError("entropy needs non-negative frequencies");
        if (v > 0) h -= v * std::log(v);
    }
    return std::clamp(1.0 - h / std::log(static_cast<double>(n)), 0.0, 1.0);
}

enum class RedundancyMetric { gini, entropy };

inline const char* metric_name(RedundancyMetric m) { return m == RedundancyMetric::gini ? "gini" : "entropy"; }

inline RedundancyMetric parse_redundancy_metric(std::string_view s) {
    if (s == "gini") return RedundancyMetric::gini;
    if (s == "entropy") return RedundancyMetric::entropy;
    throw ConfigError("unknown filter metric '" + std::string(s) + "' (expected gini or entropy)");
}

inline double redundancy(std::span<const double> p, RedundancyMetric m) {
    return m == RedundancyMetric::gini ? gini(p) : entropy_redundancy(p);
}

// --- proxy distribution --------------------------------------------------------------

struct ProxyDistribution {
    std::vector<std::size_t> assignments;  ///< synthetic row -> nearest seed
    std::vector<std::size_t> counts;       ///< per seed
    std::vector<double> p;                 ///< counts / |syn|
    double ratio_1 = 0;
    std::size_t K = 0;                     ///< number of high-frequency seeds
    std::vector<std::size_t> sorted_desc;  ///< seeds by descending p, ties by index
};

/// Smallest K >= 1 such that the K largest frequencies reach `ratio`.
inline std::size_t high_frequency_count(std::span<const double> p, std::span<const std::size_t> order, double ratio) {
    double cum = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        cum += p[order[i]];
        // Tolerate rounding in the running sum when ratio sits at the total mass.
        if (cum >= ratio - 1e-12) return i + 1;
    }
    return order.size();
}

inline ProxyDistribution build_proxy(const Dataset& syn, const Dataset& train, const ColumnStats& stats,
                                     RedundancyMetric metric = RedundancyMetric::gini, std::size_t jobs = 1) {
    if (train.empty()) throw InputError("proxy distribution needs training rows");
    if (syn.empty()) throw InputError("proxy distribution needs synthetic rows");
    ProxyDistribution proxy;
    proxy.assignments.resize(syn.size());
    parallel_for(syn.size(), jobs, [&](std::size_t i) {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < train.size(); ++j) {
            const double d = dcr(syn.rows[i], train.rows[j], train.schema, stats);
            if (d < best_d) {
                best_d = d;
                best = j;
            }
        }
        proxy.assignments[i] = best;
    });
    proxy.counts.assign(train.size(), 0);
    for (auto a : proxy.assignments) ++proxy.counts[a];
    proxy.p.resize(train.size());
    for (std::size_t j = 0; j < train.size(); ++j) {
        proxy.p[j] = static_cast<double>(proxy.counts[j]) / static_cast<double>(syn.size());
    }
    proxy.ratio_1 = redundancy(proxy.p, metric);
    proxy.sorted_desc.resize(train.size());
    std::iota(proxy.sorted_desc.begin(), proxy.sorted_desc.end(), 0);
    std::stable_sort(proxy.sorted_desc.begin(), proxy.sorted_desc.end(),
                     [&](std::size_t a, std::size_t b) { return proxy.p[a] > proxy.p[b]; });
    proxy.K = high_frequency_count(proxy.p, proxy.sorted_desc, proxy.ratio_1);
    return proxy;
}

struct PartitionIds {
    std::vector<std::size_t> high, low;  ///< synthetic row ids, ascending
};

inline PartitionIds partition_ids(const ProxyDistribution& proxy) {
    std::vector<bool> top(proxy.p.size(), false);
    for (std::size_t i = 0; i < proxy.K; ++i) top[proxy.sorted_desc[i]] = true;
    PartitionIds out;
    for (std::size_t r = 0; r < proxy.assignments.size(); ++r) {
        (top[proxy.assignments[r]] ? out.high : out.low).push_back(r);
    }
    return out;
}

/// Rows assigned to the K most frequent seeds, and the rest.
inline std::pair<Dataset, Dataset> partition(const Dataset& syn, const ProxyDistribution& proxy) {
    const auto ids = partition_ids(proxy);
    return {syn.subset(ids.high), syn.subset(ids.low)};
}

/// Chunk retention ratio A ln(ratio_1) + B, clamped to [0, 1]; 0 at ratio_1 = 0.
inline double retention_ratio(double ratio_1, double a = 0.15, double b = 0.55) {
    if (ratio_1 <= 0) return 0.0;
    return std::clamp(a * std::log(ratio_1) + b, 0.0, 1.0);
}

// --- per-row scores ------------------------------------------------------------------

struct RowScores {
    std::vector<double> correctness;
    std::vector<double> confidence;
    std::vector<double> uncertainty;
};

inline double population_std(std::span<const double> v, double mean) {
    if (v.empty()) return 0;
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size()));
}

inline double mean_of(std::span<const double> v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double median_of(std::vector<double> v) {
    if (v.empty()) return 0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
}

/// Median absolute deviation of the training targets (regression tolerance).
inline double regression_tolerance(const Dataset& train) {
    std::vector<double> y;
    for (std::size_t r = 0; r < train.size(); ++r) y.push_back(train.target_value(r));
    const double med = median_of(y);
    for (auto& v : y) v = std::abs(v - med);
    return median_of(std::move(y));
}

/// Correctness, confidence and uncertainty per traced row. For regression,
/// confidence is the negated mean absolute error and uncertainty the spread
/// of predictions; `tolerance` decides what counts as correct.
inline RowScores score_rows(const ReferenceTrace& tr, double tolerance = 0) {
    RowScores s;
    const std::size_t n = tr.values.size();
    s.correctness.resize(n);
    s.confidence.resize(n);
    s.uncertainty.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
        const auto& v = tr.values[r];
        const double y = tr.targets[r];
        s.correctness[r] = correctness(v, tr.task, y, tolerance);
        const double m = mean_of(v);
        if (tr.task == Task::classification) {
            s.confidence[r] = m;
        } else {
            double err = 0;
            for (double x : v) err += std::abs(x - y);
            s.confidence[r] = v.empty() ? 0.0 : -err / static_cast<double>(v.size());
        }
        s.uncertainty[r] = population_std(v, m);
    }
    return s;
}

// --- chunk and instance filters ------------------------------------------------------

struct ChunkOutcome {
    std::vector<std::size_t> retained;  ///< positions into the scored rows, ascending
    std::vector<double> chunk_scores;   ///< by chunk id
    std::vector<std::size_t> chunk_sizes;
    std::vector<std::size_t> retained_chunks;  ///< chunk ids, best first
};

/// Shuffle rows by `seed`, cut them into chunks of `chunk_size` (the last may
/// be short), score each chunk by mean correctness and keep the best
/// floor(ratio_2 * chunks) of them.
inline ChunkOutcome chunk_filter(std::span<const double> correctness_scores, std::size_t chunk_size, double ratio_2,
                                 std::uint64_t seed) {
    if (chunk_size < 1) throw InputError("chunk size must be >= 1");
    ChunkOutcome out;
    const std::size_t n = correctness_scores.size();
    if (n == 0) return out;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order);
    const std::size_t chunks = (n + chunk_size - 1) / chunk_size;
    out.chunk_scores.resize(chunks);
    out.chunk_sizes.resize(chunks);
    for (std::size_t c = 0; c < chunks; ++c) {
        const std::size_t lo = c * chunk_size, hi = std::min(n, lo + chunk_size);
        double sum = 0;
        for (std::size_t i = lo; i < hi; ++i) sum += correctness_scores[order[i]];
        out.chunk_sizes[c] = hi - lo;
        out.chunk_scores[c] = sum / static_cast<double>(hi - lo);
    }
    std::vector<std::size_t> rank(chunks);
    std::iota(rank.begin(), rank.end(), 0);
    std::stable_sort(rank.begin(), rank.end(),
                     [&](std::size_t a, std::size_t b) { return out.chunk_scores[a] > out.chunk_scores[b]; });
    const auto keep = static_cast<std::size_t>(std::floor(std::clamp(ratio_2, 0.0, 1.0) * static_cast<double>(chunks)));
    out.retained_chunks.assign(rank.begin(), rank.begin() + static_cast<std::ptrdiff_t>(keep));
    for (auto c : out.retained_chunks) {
        const std::size_t lo = c * chunk_size, hi = std::min(n, lo + chunk_size);
        for (std::size_t i = lo; i < hi; ++i) out.retained.push_back(order[i]);
    }
    std::sort(out.retained.begin(), out.retained.end());
    return out;
}

inline Dataset chunk_filter(const Dataset& d_high, const ReferenceTrace& tr, std::size_t chunk_size, double ratio_2,
                            std::uint64_t seed, double tolerance = 0) {
    if (tr.values.size() != d_high.size()) throw InputError("trace does not cover every row");
    const auto s = score_rows(tr, tolerance);
    return d_high.subset(chunk_filter(s.correctness, chunk_size, ratio_2, seed).retained);
}

struct InstanceOutcome {
    std::vector<std::size_t> retained;
    double conf_thresh = 0;
    double uncert_thresh = 0;
};

/// Keep rows with confidence >= mean - ratio_1 * std and uncertainty <=
/// mean + ratio_1 * std (population statistics over the given rows).
inline InstanceOutcome instance_filter(std::span<const double> confidence, std::span<const double> uncertainty,
                                       double ratio_1) {
    if (confidence.size() != uncertainty.size()) throw InputError("confidence and uncertainty sizes differ");
    InstanceOutcome out;
    if (confidence.empty()) return out;
    const double mc = mean_of(confidence), mu = mean_of(uncertainty);
    out.conf_thresh = mc - ratio_1 * population_std(confidence, mc);
    out.uncert_thresh = mu + ratio_1 * population_std(uncertainty, mu);
    // Compare against thresholds nudged by rounding slack so that rows sitting
    // exactly at a mean (zero spread) are kept.
    const double slack_c = 1e-12 * std::max(1.0, std::abs(out.conf_thresh));
    const double slack_u = 1e-12 * std::max(1.0, std::abs(out.uncert_thresh));
    for (std::size_t r = 0; r < confidence.size(); ++r) {
        if (confidence[r] >= out.conf_thresh - slack_c && uncertainty[r] <= out.uncert_thresh + slack_u) {
            out.retained.push_back(r);
        }
    }
    return out;
}

inline Dataset instance_filter(const Dataset& d_low, const ReferenceTrace& tr, double ratio_1, double tolerance = 0) {
    if (tr.values.size() != d_low.size()) throw InputError("trace does not cover every row");
    const auto s = score_rows(tr, tolerance);
    return d_low.subset(instance_filter(s.confidence, s.uncertainty, ratio_1).retained);
}

// --- tuning --------------------------------------------------------------------------

struct FilterParams {
    double A = 0.15;
    double B = 0.55;
    std::vector<std::size_t> chunk_candidates = {20, 25, 30, 35, 40, 45, 50, 55, 60};
    std::uint64_t seed = 0;
    RedundancyMetric metric = RedundancyMetric::gini;

    void validate() const {
        if (chunk_candidates.empty()) throw ConfigError("chunk_candidates must not be empty");
        for (auto s : chunk_candidates) {
            if (s < 1) throw ConfigError("chunk sizes must be >= 1");
        }
    }
};

struct CandidateReport {
    std::size_t chunk_size = 0;
    double ratio_2 = 0;
    std::vector<double> chunk_scores;
    std::vector<std::size_t> retained_chunks;
    std::size_t retained_high = 0;
    double conf_thresh = 0;
    double uncert_thresh = 0;
    std::size_t retained_low = 0;
    std::size_t union_size = 0;
    /// Infinite when the union is empty or cannot train a model.
    double surprisal = std::numeric_limits<double>::infinity();
};

struct FilterReport {
    std::string metric = "gini";
    std::size_t synthetic_rows = 0;
    std::size_t high_rows = 0, low_rows = 0;
    std::size_t K = 0;
    double ratio_1 = 0;
    double ratio_2 = 0;
    double tolerance = 0;
    std::vector<CandidateReport> candidates;
    std::optional<std::size_t> chosen;  ///< index into candidates
    double pre_gini = 0;
    std::optional<double> post_gini;
    std::vector<double> pre_p, post_p;

    std::optional<std::size_t> chosen_size() const {
        if (!chosen) return std::nullopt;
        return candidates[*chosen].chunk_size;
    }
};

namespace detail {
inline nlohmann::json finite_or_null(double v) {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}
}  // namespace detail

inline nlohmann::json report_to_json(const FilterReport& r) {
    nlohmann::json cands = nlohmann::json::array();
    for (const auto& c : r.candidates) {
        cands.push_back({{"chunk_size", c.chunk_size},
                         {"ratio_2", c.ratio_2},
                         {"chunk_scores", c.chunk_scores},
                         {"retained_chunks", c.retained_chunks},
                         {"retained_high", c.retained_high},
                         {"conf_thresh", c.conf_thresh},
                         {"uncert_thresh", c.uncert_thresh},
                         {"retained_low", c.retained_low},
                         {"union_size", c.union_size},
                         {"surprisal", detail::finite_or_null(c.surprisal)}});
    }
    nlohmann::json j = {{"metric", r.metric},
                        {"synthetic_rows", r.synthetic_rows},
                        {"high_rows", r.high_rows},
                        {"low_rows", r.low_rows},
                        {"K", r.K},
                        {"ratio_1", r.ratio_1},
                        {"ratio_2", r.ratio_2},
                        {"tolerance", r.tolerance},
                        {"candidates", cands},
                        {"pre_gini", r.pre_gini}};
    j["chosen_chunk_size"] = r.chosen_size() ? nlohmann::json(*r.chosen_size()) : nlohmann::json(nullptr);
    j["post_gini"] = r.post_gini ? nlohmann::json(*r.post_gini) : nlohmann::json(nullptr);
    return j;
}

/// Per-seed frequencies as CSV (seed,count,frequency) for plotting.
inline std::string proxy_to_csv(std::span<const double> p, std::size_t rows) {
    std::string out = "seed,count,frequency\n";
    for (std::size_t j = 0; j < p.size(); ++j) {
        out += std::to_string(j) + ',' + std::to_string(static_cast<std::size_t>(std::llround(p[j] * static_cast<double>(rows)))) +
               ',' + csv::format_number(p[j]) + '\n';
    }
    return out;
}

struct FilterResult {
    Dataset augmented;
    FilterReport report;
};

/// Full filtering pass. The reference model (trained on `train`) supplies
/// the per-row traces; each chunk size candidate gets a freshly trained model
/// on its retained union, scored by surprisal on `train`. The lowest
/// surprisal wins, ties to the smaller chunk size.
inline FilterResult tune(const Dataset& train, const Dataset& syn, const FilterParams& params,
                         const ReferenceModel& reference, const BoostParams& boost, std::size_t jobs = 1) {
    params.validate();
    if (syn.empty()) throw InputError("nothing to filter: synthetic set is empty");
    const auto stats = column_stats(train);
    FilterResult result;
    result.augmented = Dataset{syn.schema, {}, Provenance::augmented};
    auto& rep = result.report;
    rep.metric = metric_name(params.metric);
    rep.synthetic_rows = syn.size();

    const auto proxy = build_proxy(syn, train, stats, params.metric, jobs);
    rep.ratio_1 = proxy.ratio_1;
    rep.K = proxy.K;
    rep.pre_gini = gini(proxy.p);
    rep.pre_p = proxy.p;
    const auto ids = partition_ids(proxy);
    rep.high_rows = ids.high.size();
    rep.low_rows = ids.low.size();
    rep.ratio_2 = retention_ratio(proxy.ratio_1, params.A, params.B);
    rep.tolerance = train.schema.task == Task::regression ? regression_tolerance(train) : 0.0;

    const auto scores = score_rows(trace(reference, syn), rep.tolerance);
    auto pick = [](const std::vector<double>& v, const std::vector<std::size_t>& idx) {
        std::vector<double> out;
        out.reserve(idx.size());
        for (auto i : idx) out.push_back(v[i]);
        return out;
    };
    const auto high_correct = pick(scores.correctness, ids.high);
    const auto inst = instance_filter(pick(scores.confidence, ids.low), pick(scores.uncertainty, ids.low), proxy.ratio_1);

    const std::size_t nc = params.chunk_candidates.size();
    rep.candidates.resize(nc);
    std::vector<std::vector<std::size_t>> unions(nc);
    parallel_for(nc, jobs, [&](std::size_t i) {
        auto& c = rep.candidates[i];
        c.chunk_size = params.chunk_candidates[i];
        c.ratio_2 = rep.ratio_2;
        const auto chunk = chunk_filter(high_correct, c.chunk_size, rep.ratio_2, params.seed);
        c.chunk_scores = chunk.chunk_scores;
        c.retained_chunks = chunk.retained_chunks;
        c.retained_high = chunk.retained.size();
        c.conf_thresh = inst.conf_thresh;
        c.uncert_thresh = inst.uncert_thresh;
        c.retained_low = inst.retained.size();
        auto& u = unions[i];
        for (auto k : chunk.retained) u.push_back(ids.high[k]);
        for (auto k : inst.retained) u.push_back(ids.low[k]);
        std::sort(u.begin(), u.end());
        c.union_size = u.size();
        if (u.empty()) return;
        try {
            const auto model = train_staged(syn.subset(u), boost);
            c.surprisal = surprisal(model, train);
        } catch (const InputError&) {
            // A single-class union cannot train; it stays at infinite surprisal.
        }
    });

    for (std::size_t i = 0; i < nc; ++i) {
        const auto& c = rep.candidates[i];
        if (!std::isfinite(c.surprisal)) continue;
        if (!rep.chosen) {
            rep.chosen = i;
            continue;
        }
        const auto& best = rep.candidates[*rep.chosen];
        if (c.surprisal < best.surprisal || (c.surprisal == best.surprisal && c.chunk_size < best.chunk_size)) {
            rep.chosen = i;
        }
    }
    if (!rep.chosen) return result;

    result.augmented = syn.subset(unions[*rep.chosen]);
    result.augmented.provenance = Provenance::augmented;
    const auto post = build_proxy(result.augmented, train, stats, RedundancyMetric::gini, jobs);
    rep.post_gini = gini(post.p);
    rep.post_p = post.p;
    return result;
}

}  // namespace refine
