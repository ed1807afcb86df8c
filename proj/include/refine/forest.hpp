#pragma once

// CART trees and small random forests, tuned for training sets of a few
// dozen rows, plus decision-path extraction for rule building.

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
#include "refine/predicate.hpp"
#include "refine/random.hpp"

namespace refine {

struct ForestParams {
    std::size_t num_trees = 20;
    std::size_t max_depth = 4;
    std::size_t min_leaf = 2;
    /// Features examined per split; 0 means all of them.
    std::size_t features_per_split = 0;
    bool bootstrap = true;
    std::uint64_t seed = 0;

    bool operator==(const ForestParams&) const = default;

    void validate() const {
        if (num_trees < 1) throw InputError("forest needs at least one tree");
        if (max_depth < 1) throw InputError("max_depth must be >= 1");
        if (min_leaf < 1) throw InputError("min_leaf must be >= 1");
    }
};

struct TreeNode {
    bool leaf = true;
    std::size_t feature = 0;  ///< position in Schema::feature_indices()
    std::size_t column = 0;   ///< schema column index
    bool categorical = false;
    /// Numeric split: rows with x <= threshold go left. Categorical split:
    /// rows whose category index equals threshold go left.
    double threshold = 0;
    std::string category;
    std::size_t left = 0;
    std::size_t right = 0;
    std::vector<double> distribution;  ///< class counts at a classification leaf
    double value = 0;                  ///< argmax class (classification) or mean (regression)
    std::size_t support = 0;
};

class DecisionTree {
public:
    Task task = Task::classification;
    std::size_t num_classes = 0;
    std::vector<TreeNode> nodes;

    /// Leaf reached by a feature vector laid out like FeatureMatrix rows.
    std::size_t leaf_for(std::span<const double> x) const {
        std::size_t n = 0;
        while (!nodes[n].leaf) {
            const auto& node = nodes[n];
            const double v = x[node.feature];
            const bool left = node.categorical ? v == node.threshold : v <= node.threshold;
            n = left ? node.left : node.right;
        }
        return n;
    }

    double predict(std::span<const double> x) const { return nodes[leaf_for(x)].value; }

    double predict(const FeatureMatrix& m, std::size_t row) const {
        return predict(std::span<const double>(m.values.data() + row * m.cols(), m.cols()));
    }

    std::size_t leaf_count() const {
        return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](auto& n) { return n.leaf; }));
    }
};

namespace detail {

struct SplitChoice {
    double gain = 0;
    std::size_t feature = 0;
    double threshold = 0;
    bool found = false;
};

class TreeBuilder {
public:
    TreeBuilder(const FeatureMatrix& m, const ForestParams& params, Task task, std::size_t num_classes, Rng& rng)
        : m_(m), params_(params), task_(task), k_(num_classes), rng_(rng) {}

    DecisionTree build(std::vector<std::size_t> sample) {
        tree_.task = task_;
        tree_.num_classes = k_;
        tree_.nodes.clear();
        grow(sample, 0);
        return std::move(tree_);
    }

private:
    double impurity_sum(std::span<const double> counts, double n) const {
        // n * Gini impurity
        if (n <= 0) return 0;
        double sq = 0;
        for (double c : counts) sq += c * c;
        return n - sq / n;
    }

    /// n * impurity of a node (Gini for classes, SSE for regression).
    double node_cost(std::span<const std::size_t> rows) const {
        if (task_ == Task::classification) {
            std::vector<double> counts(k_, 0.0);
            for (auto r : rows) counts[static_cast<std::size_t>(m_.targets[r])] += 1;
            return impurity_sum(counts, static_cast<double>(rows.size()));
        }
        double s = 0, s2 = 0;
        for (auto r : rows) {
            s += m_.targets[r];
            s2 += m_.targets[r] * m_.targets[r];
        }
        return std::max(0.0, s2 - s * s / static_cast<double>(rows.size()));
    }

    struct Acc {
        std::vector<double> counts;
        double n = 0, s = 0, s2 = 0;
    };

    void add(Acc& a, double y) const {
        a.n += 1;
        if (task_ == Task::classification) {
            a.counts[static_cast<std::size_t>(y)] += 1;
        } else {
            a.s += y;
            a.s2 += y * y;
        }
    }
    void remove(Acc& a, double y) const {
        a.n -= 1;
        if (task_ == Task::classification) {
            a.counts[static_cast<std::size_t>(y)] -= 1;
        } else {
            a.s -= y;
            a.s2 -= y * y;
        }
    }
    double cost(const Acc& a) const {
        if (a.n <= 0) return 0;
        if (task_ == Task::classification) return impurity_sum(a.counts, a.n);
        return std::max(0.0, a.s2 - a.s * a.s / a.n);
    }
    Acc empty_acc() const { return Acc{std::vector<double>(k_, 0.0), 0, 0, 0}; }

    void consider_numeric(std::span<const std::size_t> rows, std::size_t f, double parent, SplitChoice& best) {
        std::vector<std::size_t> order(rows.begin(), rows.end());
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return m_.at(a, f) < m_.at(b, f); });
        Acc left = empty_acc(), right = empty_acc();
        for (auto r : order) add(right, m_.targets[r]);
        const std::size_t n = order.size();
        for (std::size_t i = 0; i + 1 < n; ++i) {
            const double y = m_.targets[order[i]];
            add(left, y);
            remove(right, y);
            const double v = m_.at(order[i], f), next = m_.at(order[i + 1], f);
            if (v == next) continue;
            if (i + 1 < params_.min_leaf || n - i - 1 < params_.min_leaf) continue;
            const double gain = parent - cost(left) - cost(right);
            if (gain > best.gain) {
                double mid = v + (next - v) / 2;
                if (!(mid < next)) mid = v;
                best = {gain, f, mid, true};
            }
        }
    }

    void consider_categorical(std::span<const std::size_t> rows, std::size_t f, double parent, SplitChoice& best) {
        std::vector<double> cats;
        for (auto r : rows) cats.push_back(m_.at(r, f));
        std::sort(cats.begin(), cats.end());
        cats.erase(std::unique(cats.begin(), cats.end()), cats.end());
        if (cats.size() < 2) return;
        for (double c : cats) {
            Acc left = empty_acc(), right = empty_acc();
            for (auto r : rows) add(m_.at(r, f) == c ? left : right, m_.targets[r]);
            if (left.n < static_cast<double>(params_.min_leaf) || right.n < static_cast<double>(params_.min_leaf)) {
                continue;
            }
            const double gain = parent - cost(left) - cost(right);
            if (gain > best.gain) best = {gain, f, c, true};
        }
    }

    std::size_t make_leaf(std::span<const std::size_t> rows) {
        TreeNode node;
        node.leaf = true;
        node.support = rows.size();
        if (task_ == Task::classification) {
            node.distribution.assign(k_, 0.0);
            for (auto r : rows) node.distribution[static_cast<std::size_t>(m_.targets[r])] += 1;
            node.value = static_cast<double>(
                std::max_element(node.distribution.begin(), node.distribution.end()) - node.distribution.begin());
        } else {
            double s = 0;
            for (auto r : rows) s += m_.targets[r];
            node.value = rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
        }
        tree_.nodes.push_back(std::move(node));
        return tree_.nodes.size() - 1;
    }

    std::size_t grow(std::span<const std::size_t> rows, std::size_t depth) {
        const double parent = node_cost(rows);
        const bool stop = depth >= params_.max_depth || rows.size() < 2 * params_.min_leaf || parent <= 1e-12;
        if (stop) return make_leaf(rows);

        std::vector<std::size_t> features(m_.cols());
        std::iota(features.begin(), features.end(), 0);
        rng_.shuffle(features);
        const std::size_t tried = params_.features_per_split == 0
                                      ? features.size()
                                      : std::min(params_.features_per_split, features.size());

        SplitChoice best;
        best.gain = 1e-12;
        for (std::size_t i = 0; i < tried; ++i) {
            const auto f = features[i];
            if (m_.categorical[f]) {
                consider_categorical(rows, f, parent, best);
            } else {
                consider_numeric(rows, f, parent, best);
            }
        }
        if (!best.found) return make_leaf(rows);

        std::vector<std::size_t> left, right;
        for (auto r : rows) {
            const double v = m_.at(r, best.feature);
            const bool go_left = m_.categorical[best.feature] ? v == best.threshold : v <= best.threshold;
            (go_left ? left : right).push_back(r);
        }

        const std::size_t id = tree_.nodes.size();
        tree_.nodes.emplace_back();
        {
            auto& node = tree_.nodes[id];
            node.leaf = false;
            node.feature = best.feature;
            node.column = m_.columns[best.feature];
            node.categorical = m_.categorical[best.feature];
            node.threshold = best.threshold;
            node.support = rows.size();
        }
        const auto l = grow(left, depth + 1);
        const auto r = grow(right, depth + 1);
        tree_.nodes[id].left = l;
        tree_.nodes[id].right = r;
        return id;
    }

    const FeatureMatrix& m_;
    const ForestParams& params_;
    Task task_;
    std::size_t k_;
    Rng& rng_;
    DecisionTree tree_;
};

inline void name_categories(DecisionTree& tree, const Schema& schema) {
    for (auto& n : tree.nodes) {
        if (!n.leaf && n.categorical) {
            n.category = schema.columns[n.column].categories.at(static_cast<std::size_t>(n.threshold));
        }
    }
}

}  // namespace detail

/// Grow one CART tree on the given sample (row indices, repeats allowed).
inline DecisionTree train_tree(const Dataset& train, const FeatureMatrix& m, std::vector<std::size_t> sample,
                               const ForestParams& params, Rng& rng) {
    detail::TreeBuilder builder(m, params, train.schema.task, train.schema.num_classes(), rng);
    auto tree = builder.build(std::move(sample));
    detail::name_categories(tree, train.schema);
    return tree;
}

/// Train `params.num_trees` CART trees, bagged when `params.bootstrap`.
/// Tree t uses its own stream derived from (seed, t), so the result does
/// not depend on `jobs`.
inline std::vector<DecisionTree> train_forest(const Dataset& train, const ForestParams& params,
                                              std::size_t jobs = 1) {
    params.validate();
    if (train.empty()) throw InputError("cannot train a forest on zero rows");
    const auto m = encode(train);
    std::vector<DecisionTree> trees(params.num_trees);
    parallel_for(params.num_trees, jobs, [&](std::size_t t) {
        Rng rng(derive_seed(params.seed, t));
        std::vector<std::size_t> sample(train.size());
        if (params.bootstrap) {
            for (auto& s : sample) s = static_cast<std::size_t>(rng.below(train.size()));
        } else {
            std::iota(sample.begin(), sample.end(), 0);
        }
        trees[t] = train_tree(train, m, std::move(sample), params, rng);
    });
    return trees;
}

/// Classification: fraction of rows predicted correctly. Regression: -RMSE.
inline double tree_accuracy(const DecisionTree& tree, const Dataset& data) {
    if (data.empty()) throw InputError("tree accuracy needs at least one row");
    const auto m = encode(data);
    if (tree.task == Task::classification) {
        std::size_t hits = 0;
        for (std::size_t r = 0; r < m.rows; ++r) hits += tree.predict(m, r) == m.targets[r];
        return static_cast<double>(hits) / static_cast<double>(m.rows);
    }
    double sse = 0;
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double d = tree.predict(m, r) - m.targets[r];
        sse += d * d;
    }
    return -std::sqrt(sse / static_cast<double>(m.rows));
}

/// Indices of the k best-scoring trees, best first; ties favour lower indices.
inline std::vector<std::size_t> select_top_k(std::span<const double> scores, std::size_t k) {
    if (k > scores.size()) {
        throw InputError("top-k of " + std::to_string(k) + " exceeds forest size " + std::to_string(scores.size()));
    }
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    idx.resize(k);
    return idx;
}

inline std::vector<std::size_t> select_top_k(const std::vector<DecisionTree>& trees, const Dataset& data,
                                             std::size_t k) {
    std::vector<double> scores;
    scores.reserve(trees.size());
    for (const auto& t : trees) scores.push_back(tree_accuracy(t, data));
    return select_top_k(scores, k);
}

// --- decision paths ---------------------------------------------------------

struct PathPredicate {
    std::size_t column = 0;
    Op op = Op::le;
    double value = 0;      ///< numeric bound
    std::string category;  ///< for Op::eq on categorical columns

    bool operator==(const PathPredicate&) const = default;
};

/// One root-to-leaf path. Numeric predicates hold at most one lower and one
/// upper bound per column. The negative side of a categorical split cannot
/// be written with the rule operators, so it is kept in `excluded`.
struct RawPath {
    std::vector<PathPredicate> predicates;
    std::vector<std::pair<std::size_t, std::string>> excluded;
    double outcome = 0;  ///< class index or leaf value
    std::size_t support = 0;

    bool operator==(const RawPath&) const = default;

    bool matches(const Row& row) const {
        for (const auto& p : predicates) {
            if (p.op == Op::eq) {
                if (std::get<std::string>(row[p.column]) != p.category) return false;
            } else if (!holds(std::get<double>(row[p.column]), p.op, p.value)) {
                return false;
            }
        }
        for (const auto& [col, cat] : excluded) {
            if (std::get<std::string>(row[col]) == cat) return false;
        }
        return true;
    }
};

namespace detail {

inline void tighten(std::vector<PathPredicate>& preds, PathPredicate p) {
    for (auto& q : preds) {
        if (q.column != p.column) continue;
        if (is_lower(p.op) && is_lower(q.op)) {
            if (p.value > q.value || (p.value == q.value && p.op == Op::gt)) q = p;
            return;
        }
        if (is_upper(p.op) && is_upper(q.op)) {
            if (p.value < q.value || (p.value == q.value && p.op == Op::lt)) q = p;
            return;
        }
    }
    preds.push_back(std::move(p));
}

inline void collect_paths(const DecisionTree& tree, std::size_t n, RawPath current, std::vector<RawPath>& out) {
    const auto& node = tree.nodes[n];
    if (node.leaf) {
        current.outcome = node.value;
        current.support = node.support;
        // Equality already pins the category; drop redundant exclusions.
        std::erase_if(current.excluded, [&](const auto& ex) {
            return std::any_of(current.predicates.begin(), current.predicates.end(),
                               [&](const PathPredicate& p) { return p.op == Op::eq && p.column == ex.first; });
        });
        std::sort(current.predicates.begin(), current.predicates.end(), [](const auto& a, const auto& b) {
            return a.column != b.column ? a.column < b.column : is_lower(a.op) && !is_lower(b.op);
        });
        out.push_back(std::move(current));
        return;
    }
    RawPath left = current;
    RawPath right = std::move(current);
    if (node.categorical) {
        left.predicates.push_back({node.column, Op::eq, 0, node.category});
        right.excluded.emplace_back(node.column, node.category);
    } else {
        tighten(left.predicates, {node.column, Op::le, node.threshold, {}});
        tighten(right.predicates, {node.column, Op::gt, node.threshold, {}});
    }
    collect_paths(tree, node.left, std::move(left), out);
    collect_paths(tree, node.right, std::move(right), out);
}

}  // namespace detail

/// One path per leaf, in left-to-right leaf order.
inline std::vector<RawPath> extract_paths(const DecisionTree& tree) {
    std::vector<RawPath> out;
    if (!tree.nodes.empty()) detail::collect_paths(tree, 0, {}, out);
    return out;
}

// --- regression target intervals ------------------------------------------

/// Split the observed label range into at most `num_intervals` contiguous
/// intervals at empirical quantiles. With a reference tree, each interior
/// boundary moves to the nearest leaf value within one bin width. When there
/// are no more distinct labels than intervals, each distinct label gets its
/// own interval with boundaries at the midpoints.
inline std::vector<Interval> bin_regression_targets(const Dataset& train, std::size_t num_intervals,
                                                    const DecisionTree* reference = nullptr) {
    if (train.schema.task != Task::regression) throw InputError("target binning needs a regression task");
    if (num_intervals < 1) throw InputError("need at least one target interval");
    if (train.empty()) throw InputError("target binning needs at least one row");
    std::vector<double> y;
    for (std::size_t r = 0; r < train.size(); ++r) y.push_back(train.target_value(r));
    std::sort(y.begin(), y.end());
    std::vector<double> distinct = y;
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    const double lo = y.front(), hi = y.back();

    std::vector<double> cuts;
    if (distinct.size() <= num_intervals) {
        for (std::size_t i = 0; i + 1 < distinct.size(); ++i) cuts.push_back((distinct[i] + distinct[i + 1]) / 2);
    } else {
        const double width = (hi - lo) / static_cast<double>(num_intervals);
        std::vector<double> leaves;
        if (reference) {
            for (const auto& n : reference->nodes) {
                if (n.leaf) leaves.push_back(n.value);
            }
        }
        for (std::size_t i = 1; i < num_intervals; ++i) {
            const double pos = static_cast<double>(i) / static_cast<double>(num_intervals) *
                               static_cast<double>(y.size() - 1);
            const auto base = static_cast<std::size_t>(std::floor(pos));
            const double frac = pos - static_cast<double>(base);
            double cut = base + 1 < y.size() ? y[base] + frac * (y[base + 1] - y[base]) : y[base];
            double nearest = std::numeric_limits<double>::infinity();
            for (double v : leaves) {
                if (std::abs(v - cut) < std::abs(nearest - cut)) nearest = v;
            }
            if (std::abs(nearest - cut) <= width) cut = nearest;
            cuts.push_back(cut);
        }
        std::sort(cuts.begin(), cuts.end());
        cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
        std::erase_if(cuts, [&](double c) { return c <= lo || c >= hi; });
    }

    std::vector<Interval> out;
    double start = lo;
    for (double c : cuts) {
        out.push_back({start, c});
        start = c;
    }
    out.push_back({start, hi});
    return out;
}

// --- serialization ----------------------------------------------------------

inline nlohmann::json tree_to_json(const DecisionTree& tree, const Schema& schema) {
    nlohmann::json nodes = nlohmann::json::array();
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
        const auto& n = tree.nodes[i];
        nlohmann::json j{{"id", i}, {"support", n.support}};
        if (n.leaf) {
            j["leaf"] = true;
            if (tree.task == Task::classification) {
                j["prediction"] = schema.classes().at(static_cast<std::size_t>(n.value));
                j["distribution"] = n.distribution;
            } else {
                j["prediction"] = n.value;
            }
        } else {
            j["leaf"] = false;
            j["feature"] = schema.columns[n.column].name;
            if (n.categorical) {
                j["equals"] = n.category;
            } else {
                j["threshold"] = n.threshold;
            }
            j["left"] = n.left;
            j["right"] = n.right;
        }
        nodes.push_back(std::move(j));
    }
    return {{"task", tree.task == Task::classification ? "classification" : "regression"}, {"nodes", nodes}};
}

}  // namespace refine
