#pragma once

// Gradient-boosted trees with staged (per-round) predictions. Serves as the
// reference model for filtering (correctness, confidence, surprisal) and as
// the downstream learner for train-on-synthetic, test-on-real evaluation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "refine/dataset.hpp"
#include "refine/encoding.hpp"
#include "refine/parallel.hpp"
#include "refine/random.hpp"

namespace refine {

struct BoostParams {
    std::size_t rounds = 50;
    double learning_rate = 0.1;
    std::size_t max_depth = 3;
    double lambda = 1.0;
    std::size_t min_leaf = 1;
    std::size_t max_bins = 64;

    bool operator==(const BoostParams&) const = default;

    void validate() const {
        if (rounds < 1) throw InputError("boosting needs at least one round");
        if (!(learning_rate > 0)) throw InputError("learning rate must be positive");
        if (max_depth < 1) throw InputError("boosting tree depth must be >= 1");
        if (lambda < 0) throw InputError("lambda must be >= 0");
        if (max_bins < 2) throw InputError("max_bins must be >= 2");
    }
};

struct BoostNode {
    bool leaf = true;
    std::size_t feature = 0;
    bool categorical = false;
    double threshold = 0;
    std::size_t left = 0, right = 0;
    double value = 0;
};

struct BoostTree {
    std::vector<BoostNode> nodes;

    double predict(std::span<const double> x) const {
        std::size_t n = 0;
        while (!nodes[n].leaf) {
            const auto& node = nodes[n];
            const double v = x[node.feature];
            n = (node.categorical ? v == node.threshold : v <= node.threshold) ? node.left : node.right;
        }
        return nodes[n].value;
    }
};

class ReferenceModel {
public:
    Task task = Task::classification;
    std::size_t outputs = 1;  ///< number of classes, or 1 for regression
    std::vector<double> base;
    /// stages[t][k]: the tree for output k added at round t + 1.
    std::vector<std::vector<BoostTree>> stages;
    double learning_rate = 0.1;

    std::size_t rounds() const { return stages.size(); }

    /// Raw scores using the first `n_stages` rounds.
    std::vector<double> scores(std::span<const double> x, std::size_t n_stages) const {
        std::vector<double> f = base;
        for (std::size_t t = 0; t < n_stages; ++t) {
            for (std::size_t k = 0; k < outputs; ++k) f[k] += stages[t][k].predict(x);
        }
        return f;
    }

    static void softmax(std::vector<double>& f) {
        const double mx = *std::max_element(f.begin(), f.end());
        double z = 0;
        for (auto& v : f) {
            v = std::exp(v - mx);
            z += v;
        }
        for (auto& v : f) v /= z;
    }

    std::vector<double> probabilities(std::span<const double> x) const {
        auto f = scores(x, rounds());
        softmax(f);
        return f;
    }

    /// Class index (classification) or value (regression) from the final model.
    double predict(std::span<const double> x) const {
        auto f = scores(x, rounds());
        if (task == Task::regression) return f[0];
        return static_cast<double>(std::max_element(f.begin(), f.end()) - f.begin());
    }
};

namespace detail {

/// Per-feature histogram bins fixed from the training data.
struct Binning {
    std::vector<std::vector<double>> cuts;  ///< numeric: sorted split candidates
    std::vector<std::size_t> bins;          ///< bin count per feature
    std::vector<std::uint16_t> codes;       ///< row-major bin index per cell

    std::uint16_t code(std::size_t r, std::size_t f) const { return codes[r * bins.size() + f]; }
};

inline Binning make_binning(const FeatureMatrix& m, std::size_t max_bins) {
    Binning b;
    const std::size_t d = m.cols();
    b.cuts.resize(d);
    b.bins.resize(d);
    for (std::size_t f = 0; f < d; ++f) {
        if (m.categorical[f]) {
            double mx = -1;
            for (std::size_t r = 0; r < m.rows; ++r) mx = std::max(mx, m.at(r, f));
            b.bins[f] = static_cast<std::size_t>(mx) + 2;  // slot 0 holds unknown (-1)
            continue;
        }
        std::vector<double> v(m.rows);
        for (std::size_t r = 0; r < m.rows; ++r) v[r] = m.at(r, f);
        std::sort(v.begin(), v.end());
        std::vector<double> distinct = v;
        distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
        auto& cuts = b.cuts[f];
        if (distinct.size() <= max_bins) {
            for (std::size_t i = 0; i + 1 < distinct.size(); ++i) {
                cuts.push_back(distinct[i] + (distinct[i + 1] - distinct[i]) / 2);
            }
        } else {
            for (std::size_t q = 1; q < max_bins; ++q) {
                const std::size_t pos = q * v.size() / max_bins;
                const double a = v[pos - 1], c = v[pos];
                if (a != c) cuts.push_back(a + (c - a) / 2);
            }
            cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
        }
        b.bins[f] = cuts.size() + 1;
    }
    b.codes.resize(m.rows * d);
    for (std::size_t r = 0; r < m.rows; ++r) {
        for (std::size_t f = 0; f < d; ++f) {
            const double x = m.at(r, f);
            std::size_t code;
            if (m.categorical[f]) {
                code = static_cast<std::size_t>(x + 1);
            } else {
                code = static_cast<std::size_t>(std::lower_bound(b.cuts[f].begin(), b.cuts[f].end(), x) -
                                                b.cuts[f].begin());
            }
            b.codes[r * d + f] = static_cast<std::uint16_t>(code);
        }
    }
    return b;
}

class BoostTreeBuilder {
public:
    BoostTreeBuilder(const FeatureMatrix& m, const Binning& bins, const BoostParams& p) : m_(m), bins_(bins), p_(p) {}

    BoostTree build(std::span<const double> grad, std::span<const double> hess) {
        grad_ = grad;
        hess_ = hess;
        tree_ = {};
        std::vector<std::size_t> rows(m_.rows);
        std::iota(rows.begin(), rows.end(), 0);
        grow(rows, 0);
        return std::move(tree_);
    }

private:
    struct Bin {
        double g = 0, h = 0;
        std::size_t n = 0;
    };

    double score(double g, double h) const { return g * g / (h + p_.lambda); }

    std::size_t leaf(double g, double h) {
        BoostNode node;
        node.value = h + p_.lambda > 0 ? -g / (h + p_.lambda) * p_.learning_rate : 0.0;
        tree_.nodes.push_back(node);
        return tree_.nodes.size() - 1;
    }

    std::size_t grow(const std::vector<std::size_t>& rows, std::size_t depth) {
        double g = 0, h = 0;
        for (auto r : rows) {
            g += grad_[r];
            h += hess_[r];
        }
        if (depth >= p_.max_depth || rows.size() < 2 * p_.min_leaf) return leaf(g, h);

        const double parent = score(g, h);
        double best_gain = 1e-12;
        std::size_t best_f = 0, best_bin = 0;
        bool found = false;
        const std::size_t d = m_.cols();
        std::vector<Bin> hist;
        for (std::size_t f = 0; f < d; ++f) {
            hist.assign(bins_.bins[f], Bin{});
            for (auto r : rows) {
                auto& b = hist[bins_.code(r, f)];
                b.g += grad_[r];
                b.h += hess_[r];
                ++b.n;
            }
            if (m_.categorical[f]) {
                for (std::size_t c = 0; c < hist.size(); ++c) {
                    const auto& l = hist[c];
                    if (l.n < p_.min_leaf || rows.size() - l.n < p_.min_leaf) continue;
                    const double gain = score(l.g, l.h) + score(g - l.g, h - l.h) - parent;
                    if (gain > best_gain) {
                        best_gain = gain;
                        best_f = f;
                        best_bin = c;
                        found = true;
                    }
                }
                continue;
            }
            Bin acc;
            for (std::size_t c = 0; c + 1 < hist.size(); ++c) {
                acc.g += hist[c].g;
                acc.h += hist[c].h;
                acc.n += hist[c].n;
                if (acc.n < p_.min_leaf || rows.size() - acc.n < p_.min_leaf) continue;
                if (acc.n == rows.size()) break;
                const double gain = score(acc.g, acc.h) + score(g - acc.g, h - acc.h) - parent;
                if (gain > best_gain) {
                    best_gain = gain;
                    best_f = f;
                    best_bin = c;
                    found = true;
                }
            }
        }
        if (!found) return leaf(g, h);

        std::vector<std::size_t> left, right;
        const bool cat = m_.categorical[best_f];
        for (auto r : rows) {
            const auto code = bins_.code(r, best_f);
            ((cat ? code == best_bin : code <= best_bin) ? left : right).push_back(r);
        }
        const std::size_t id = tree_.nodes.size();
        tree_.nodes.emplace_back();
        tree_.nodes[id].leaf = false;
        tree_.nodes[id].feature = best_f;
        tree_.nodes[id].categorical = cat;
        tree_.nodes[id].threshold = cat ? static_cast<double>(best_bin) - 1.0 : bins_.cuts[best_f][best_bin];
        const auto l = grow(left, depth + 1);
        const auto r = grow(right, depth + 1);
        tree_.nodes[id].left = l;
        tree_.nodes[id].right = r;
        return id;
    }

    const FeatureMatrix& m_;
    const Binning& bins_;
    const BoostParams& p_;
    std::span<const double> grad_, hess_;
    BoostTree tree_;
};

inline std::span<const double> row_of(const FeatureMatrix& m, std::size_t r) {
    return {m.values.data() + r * m.cols(), m.cols()};
}

}  // namespace detail

/// Boosted ensemble with `params.rounds` stages: softmax over one score per
/// class for classification, squared loss for regression.
inline ReferenceModel train_staged(const Dataset& train, const BoostParams& params) {
    params.validate();
    if (train.empty()) throw InputError("cannot train the reference model on zero rows");
    const auto m = encode(train);
    const auto bins = detail::make_binning(m, params.max_bins);
    ReferenceModel model;
    model.task = train.schema.task;
    model.learning_rate = params.learning_rate;
    const std::size_t n = m.rows;

    if (model.task == Task::classification) {
        const std::size_t k = train.schema.num_classes();
        std::vector<double> counts(k, 0.0);
        for (double y : m.targets) counts[static_cast<std::size_t>(y)] += 1;
        if (std::count_if(counts.begin(), counts.end(), [](double c) { return c > 0; }) < 2) {
            throw InputError("reference model needs at least two classes in its training data");
        }
        model.outputs = k;
        for (double c : counts) model.base.push_back(std::log((c + 1.0) / (static_cast<double>(n) + static_cast<double>(k))));
    } else {
        model.outputs = 1;
        model.base = {std::accumulate(m.targets.begin(), m.targets.end(), 0.0) / static_cast<double>(n)};
    }

    const std::size_t k = model.outputs;
    std::vector<double> f(n * k);
    for (std::size_t r = 0; r < n; ++r) std::copy(model.base.begin(), model.base.end(), f.begin() + static_cast<std::ptrdiff_t>(r * k));
    std::vector<double> grad(n), hess(n), prob(n * k);
    detail::BoostTreeBuilder builder(m, bins, params);

    for (std::size_t t = 0; t < params.rounds; ++t) {
        std::vector<BoostTree> round;
        if (model.task == Task::classification) {
            for (std::size_t r = 0; r < n; ++r) {
                std::vector<double> p(f.begin() + static_cast<std::ptrdiff_t>(r * k),
                                      f.begin() + static_cast<std::ptrdiff_t>((r + 1) * k));
                ReferenceModel::softmax(p);
                std::copy(p.begin(), p.end(), prob.begin() + static_cast<std::ptrdiff_t>(r * k));
            }
            for (std::size_t c = 0; c < k; ++c) {
                for (std::size_t r = 0; r < n; ++r) {
                    const double p = prob[r * k + c];
                    grad[r] = p - (static_cast<std::size_t>(m.targets[r]) == c ? 1.0 : 0.0);
                    hess[r] = std::max(p * (1.0 - p), 1e-16);
                }
                round.push_back(builder.build(grad, hess));
            }
        } else {
            for (std::size_t r = 0; r < n; ++r) {
                grad[r] = f[r] - m.targets[r];
                hess[r] = 1.0;
            }
            round.push_back(builder.build(grad, hess));
        }
        for (std::size_t r = 0; r < n; ++r) {
            const auto x = detail::row_of(m, r);
            for (std::size_t c = 0; c < k; ++c) f[r * k + c] += round[c].predict(x);
        }
        model.stages.push_back(std::move(round));
    }
    return model;
}

/// Per-row staged outputs: values[r][t] is the true-label probability
/// (classification) or the prediction (regression) after round t + 1.
struct ReferenceTrace {
    Task task = Task::classification;
    std::size_t rounds = 0;
    std::vector<std::vector<double>> values;
    /// True target per row (class index or value).
    std::vector<double> targets;
};

inline ReferenceTrace trace(const ReferenceModel& model, const Dataset& data) {
    const auto m = encode(data);
    ReferenceTrace tr;
    tr.task = model.task;
    tr.rounds = model.rounds();
    tr.targets = m.targets;
    tr.values.resize(m.rows);
    for (std::size_t r = 0; r < m.rows; ++r) {
        const auto x = detail::row_of(m, r);
        std::vector<double> f = model.base;
        auto& out = tr.values[r];
        out.reserve(model.rounds());
        for (std::size_t t = 0; t < model.rounds(); ++t) {
            for (std::size_t k = 0; k < model.outputs; ++k) f[k] += model.stages[t][k].predict(x);
            if (model.task == Task::classification) {
                auto p = f;
                ReferenceModel::softmax(p);
                out.push_back(p[static_cast<std::size_t>(m.targets[r])]);
            } else {
                out.push_back(f[0]);
            }
        }
    }
    return tr;
}

/// Fraction of rounds that got the row right: true-label probability > 0.5
/// for classification; |prediction - y| <= tolerance for regression.
inline double correctness(std::span<const double> trace_row, Task task, double y = 0, double tolerance = 0) {
    if (trace_row.empty()) return 0;
    std::size_t hits = 0;
    for (double v : trace_row) {
        hits += task == Task::classification ? v > 0.5 : std::abs(v - y) <= tolerance;
    }
    return static_cast<double>(hits) / static_cast<double>(trace_row.size());
}

inline constexpr double probability_floor = 1e-12;

/// Mean negative log-likelihood of the true labels under the final model
/// (probabilities floored at 1e-12); mean squared error for regression.
inline double surprisal(const ReferenceModel& model, const Dataset& data) {
    if (data.empty()) return 0;
    const auto m = encode(data);
    double total = 0;
    for (std::size_t r = 0; r < m.rows; ++r) {
        const auto x = detail::row_of(m, r);
        if (model.task == Task::classification) {
            const auto p = model.probabilities(x);
            total += -std::log(std::max(p[static_cast<std::size_t>(m.targets[r])], probability_floor));
        } else {
            const double d = model.predict(x) - m.targets[r];
            total += d * d;
        }
    }
    return total / static_cast<double>(m.rows);
}

inline std::vector<double> predict_all(const ReferenceModel& model, const Dataset& data) {
    const auto m = encode(data);
    std::vector<double> out(m.rows);
    for (std::size_t r = 0; r < m.rows; ++r) out[r] = model.predict(detail::row_of(m, r));
    return out;
}

// --- metrics ---------------------------------------------------------------------------

/// Macro-averaged F1 over the labels present in either vector; a label with
/// no true or predicted positives in one role scores F1 = 0.
inline double macro_f1(std::span<const std::size_t> truth, std::span<const std::size_t> predicted) {
    if (truth.size() != predicted.size() || truth.empty()) throw InputError("macro F1 needs equal, non-empty inputs");
    std::vector<std::size_t> labels(truth.begin(), truth.end());
    labels.insert(labels.end(), predicted.begin(), predicted.end());
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    double sum = 0;
    for (auto c : labels) {
        double tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            const bool t = truth[i] == c, p = predicted[i] == c;
            tp += t && p;
            fp += !t && p;
            fn += t && !p;
        }
        const double denom = 2 * tp + fp + fn;
        sum += denom > 0 ? 2 * tp / denom : 0.0;
    }
    return sum / static_cast<double>(labels.size());
}

/// Coefficient of determination; a constant truth scores 1 when matched exactly, else 0.
inline double r2_score(std::span<const double> truth, std::span<const double> predicted) {
    if (truth.size() != predicted.size() || truth.empty()) throw InputError("R^2 needs equal, non-empty inputs");
    const double mean = std::accumulate(truth.begin(), truth.end(), 0.0) / static_cast<double>(truth.size());
    double ss_res = 0, ss_tot = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        ss_res += (truth[i] - predicted[i]) * (truth[i] - predicted[i]);
        ss_tot += (truth[i] - mean) * (truth[i] - mean);
    }
    if (ss_tot == 0) return ss_res == 0 ? 1.0 : 0.0;
    return 1.0 - ss_res / ss_tot;
}

struct MetricSummary {
    std::string metric;  ///< "macro_f1" or "r2"
    double mean = 0;
    double std = 0;  ///< population standard deviation over seeds
    std::vector<double> per_seed;
    std::size_t sample_size = 0;
};

inline nlohmann::json metrics_to_json(const MetricSummary& s) {
    return {{"metric", s.metric}, {"mean", s.mean}, {"std", s.std}, {"per_seed", s.per_seed},
            {"sample_size", s.sample_size}};
}

/// Score of a model trained on `train` and tested on `test`.
inline double downstream_score(const Dataset& train, const Dataset& test, const BoostParams& params) {
    const auto model = train_staged(train, params);
    const auto pred = predict_all(model, test);
    if (test.schema.task == Task::classification) {
        std::vector<std::size_t> truth, guess;
        for (std::size_t r = 0; r < test.size(); ++r) {
            truth.push_back(test.label(r));
            guess.push_back(static_cast<std::size_t>(pred[r]));
        }
        return macro_f1(truth, guess);
    }
    std::vector<double> truth;
    for (std::size_t r = 0; r < test.size(); ++r) truth.push_back(test.target_value(r));
    return r2_score(truth, pred);
}

/// Train on synthetic, test on real: per seed, subsample up to
/// `sample_size` synthetic rows, fit a fresh model and score it on the real
/// test rows (macro-F1 or R^2).
inline MetricSummary evaluate_mle(const Dataset& synthetic, const Dataset& real_test,
                                  std::span<const std::uint64_t> seeds, const BoostParams& params,
                                  std::size_t sample_size = 1000, std::size_t jobs = 1) {
    if (synthetic.empty()) throw InputError("no synthetic rows to evaluate");
    if (real_test.empty()) throw InputError("test set is empty");
    if (seeds.empty()) throw InputError("evaluation needs at least one seed");
    const bool classification = synthetic.schema.task == Task::classification;
    const std::size_t take = std::min(sample_size, synthetic.size());

    auto draw = [&](std::uint64_t seed) {
        std::vector<std::size_t> idx(synthetic.size());
        std::iota(idx.begin(), idx.end(), 0);
        Rng rng(seed);
        rng.shuffle(idx);
        idx.resize(take);
        std::sort(idx.begin(), idx.end());
        return synthetic.subset(idx);
    };
    auto single_class = [&](const Dataset& d) {
        if (!classification) return false;
        for (std::size_t r = 1; r < d.size(); ++r) {
            if (d.label(r) != d.label(0)) return false;
        }
        return true;
    };

    MetricSummary s;
    s.metric = classification ? "macro_f1" : "r2";
    s.sample_size = take;
    s.per_seed.resize(seeds.size());
    parallel_for(seeds.size(), jobs, [&](std::size_t i) {
        auto sample = draw(seeds[i]);
        if (single_class(sample)) sample = draw(derive_seed(seeds[i], 1));
        if (single_class(sample)) throw InputError("synthetic sample holds a single class");
        s.per_seed[i] = downstream_score(sample, real_test, params);
    });
    s.mean = std::accumulate(s.per_seed.begin(), s.per_seed.end(), 0.0) / static_cast<double>(seeds.size());
    double ss = 0;
    for (double v : s.per_seed) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(seeds.size()));
    return s;
}

}  // namespace refine
