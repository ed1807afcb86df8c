#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "refine/boosting.hpp"
#include "support.hpp"

using namespace refine;
using testing_support::table;

namespace {

Dataset toy(std::uint64_t seed, std::size_t n, double noise = 0) {
    Rng rng(seed);
    std::string text = "a,b,k,y\n";
    const char* kinds[] = {"p", "q"};
    for (std::size_t i = 0; i < n; ++i) {
        const double a = std::round(rng.uniform(0, 10) * 100) / 100;
        const double b = std::round(rng.uniform(0, 10) * 100) / 100;
        const char* k = kinds[rng.below(2)];
        const bool pos = a + (k[0] == 'q' ? 3 : 0) + noise * rng.uniform(-5, 5) > 6;
        text += csv::format_number(a) + "," + csv::format_number(b) + "," + k + "," + (pos ? "hi" : "lo") + "\n";
    }
    return table(text);
}

double oracle_macro_f1(const std::vector<std::size_t>& t, const std::vector<std::size_t>& p) {
    std::map<std::size_t, std::array<double, 3>> c;  // tp, fp, fn
    for (std::size_t i = 0; i < t.size(); ++i) {
        c[t[i]];
        c[p[i]];
        if (t[i] == p[i]) {
            c[t[i]][0] += 1;
        } else {
            c[p[i]][1] += 1;
            c[t[i]][2] += 1;
        }
    }
    double s = 0;
    for (const auto& [k, v] : c) {
        const double prec = v[0] + v[1] > 0 ? v[0] / (v[0] + v[1]) : 0;
        const double rec = v[0] + v[2] > 0 ? v[0] / (v[0] + v[2]) : 0;
        s += prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0;
    }
    return s / static_cast<double>(c.size());
}

}  // namespace

TEST(TrainStaged, SeparableDataIsFitExactly) {
    const auto ds = toy(1, 80);
    BoostParams p;
    p.rounds = 20;
    const auto m = train_staged(ds, p);
    EXPECT_EQ(m.rounds(), 20u);
    const auto pred = predict_all(m, ds);
    for (std::size_t r = 0; r < ds.size(); ++r) EXPECT_EQ(pred[r], static_cast<double>(ds.label(r))) << r;
}

TEST(TrainStaged, ConstantRegressionTarget) {
    const auto ds = table("x,y\n1,3.5\n2,3.5\n5,3.5\n7,3.5\n", "y");
    const auto m = train_staged(ds, {});
    for (double v : predict_all(m, ds)) EXPECT_NEAR(v, 3.5, 1e-12);
    const auto tr = trace(m, ds);
    for (const auto& row : tr.values) EXPECT_DOUBLE_EQ(correctness(row, Task::regression, 3.5, 0.0), 1.0);
}

TEST(TrainStaged, SingleClassIsAnError) {
    const auto ds = toy(1, 80);
    std::vector<std::size_t> lo;
    for (std::size_t r = 0; r < ds.size(); ++r) {
        if (ds.label(r) == 0) lo.push_back(r);
    }
    EXPECT_THROW(train_staged(ds.subset(lo), {}), InputError);
}

TEST(TrainStaged, InvalidParamsAreRejected) {
    BoostParams p;
    p.rounds = 0;
    EXPECT_THROW(train_staged(toy(1, 10), p), InputError);
}

TEST(TrainStaged, Deterministic) {
    const auto ds = toy(2, 60, 1.0);
    const auto a = train_staged(ds, {}), b = train_staged(ds, {});
    const auto ta = trace(a, ds), tb = trace(b, ds);
    EXPECT_EQ(ta.values, tb.values);
}

TEST(Trace, ShapeRangeAndTrainingProgress) {
    const auto ds = toy(3, 60, 1.0);
    BoostParams p;
    p.rounds = 30;
    const auto m = train_staged(ds, p);
    const auto tr = trace(m, ds);
    ASSERT_EQ(tr.values.size(), ds.size());
    double previous = 0;
    for (std::size_t t = 0; t < p.rounds; ++t) {
        double mean = 0;
        for (const auto& row : tr.values) {
            ASSERT_EQ(row.size(), p.rounds);
            EXPECT_GT(row[t], 0.0);
            EXPECT_LT(row[t], 1.0);
            mean += row[t];
        }
        mean /= static_cast<double>(ds.size());
        EXPECT_GE(mean, previous - 1e-12) << "round " << t;
        previous = mean;
    }
}

TEST(Trace, LastRoundMatchesTheFinalModel) {
    const auto ds = toy(4, 50, 1.0);
    const auto m = train_staged(ds, {});
    const auto tr = trace(m, ds);
    const auto enc = encode(ds);
    for (std::size_t r = 0; r < ds.size(); ++r) {
        const auto p = m.probabilities(detail::row_of(enc, r));
        EXPECT_DOUBLE_EQ(tr.values[r].back(), p[ds.label(r)]);
    }
}

TEST(Correctness, Examples) {
    const std::vector<double> seven = {0.9, 0.8, 0.6, 0.55, 0.7, 0.51, 0.99, 0.2, 0.3, 0.1};
    EXPECT_DOUBLE_EQ(correctness(seven, Task::classification), 0.7);
    const std::vector<double> halves(5, 0.5);
    EXPECT_DOUBLE_EQ(correctness(halves, Task::classification), 0.0);
    const std::vector<double> sure(4, 0.99);
    EXPECT_DOUBLE_EQ(correctness(sure, Task::classification), 1.0);
    const std::vector<double> reg = {1.0, 1.5, 2.0, 3.1};
    EXPECT_DOUBLE_EQ(correctness(reg, Task::regression, 2.0, 1.0), 0.75);
}

TEST(Surprisal, UniformModelScoresLnTwo) {
    const auto ds = toy(5, 20);
    ReferenceModel m;
    m.outputs = 2;
    m.base = {0, 0};
    EXPECT_NEAR(surprisal(m, ds), std::log(2.0), 1e-12);
}

TEST(Surprisal, ProbabilityIsFloored) {
    const auto ds = table("x,y\n1,a\n2,b\n");
    ReferenceModel m;
    m.outputs = 2;
    m.base = {0, -1000};
    const auto enc = encode(ds);
    const double expected = (std::log(1 + std::exp(-1000.0)) + -std::log(1e-12)) / 2;
    EXPECT_NEAR(surprisal(m, ds.subset(std::vector<std::size_t>{1})), 27.631021115928547, 1e-9);
    EXPECT_NEAR(surprisal(m, ds), expected, 1e-9);
}

TEST(Surprisal, RegressionIsMeanSquaredError) {
    const auto ds = table("x,y\n1,1.5\n2,3.5\n", "y");
    ReferenceModel m;
    m.task = Task::regression;
    m.base = {2.5};
    EXPECT_DOUBLE_EQ(surprisal(m, ds), 1.0);
}

TEST(MacroF1, ConstantClassifierOnBalancedBinary) {
    const std::vector<std::size_t> truth = {0, 1, 0, 1, 0, 1}, pred(6, 0);
    EXPECT_NEAR(macro_f1(truth, pred), 1.0 / 3.0, 1e-12);
}

TEST(MacroF1, AgreesWithOracle) {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        Rng rng(seed);
        const auto n = 1 + rng.below(40);
        const auto k = 1 + rng.below(5);
        std::vector<std::size_t> t(n), p(n);
        for (std::size_t i = 0; i < n; ++i) {
            t[i] = rng.below(k);
            p[i] = rng.below(k);
        }
        EXPECT_NEAR(macro_f1(t, p), oracle_macro_f1(t, p), 1e-12) << seed;
    }
}

TEST(R2, MeanPredictorScoresZero) {
    const std::vector<double> t = {1, 2, 3, 6}, mean(4, 3.0);
    EXPECT_NEAR(r2_score(t, mean), 0.0, 1e-12);
    EXPECT_DOUBLE_EQ(r2_score(t, t), 1.0);
    const std::vector<double> flat(3, 2.0), off(3, 2.5);
    EXPECT_DOUBLE_EQ(r2_score(flat, flat), 1.0);
    EXPECT_DOUBLE_EQ(r2_score(flat, off), 0.0);
}

TEST(EvaluateMle, OneScorePerSeed) {
    const auto train = toy(6, 120, 0.5), test = toy(7, 60, 0.5);
    const std::vector<std::uint64_t> seeds = {0, 1, 2, 3};
    BoostParams p;
    p.rounds = 10;
    const auto s = evaluate_mle(train, test, seeds, p, 50);
    EXPECT_EQ(s.metric, "macro_f1");
    ASSERT_EQ(s.per_seed.size(), 4u);
    EXPECT_EQ(s.sample_size, 50u);
    for (double v : s.per_seed) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    const auto again = evaluate_mle(train, test, seeds, p, 50, 3);
    EXPECT_EQ(again.per_seed, s.per_seed);

    const std::vector<std::uint64_t> one = {9};
    EXPECT_DOUBLE_EQ(evaluate_mle(train, test, one, p, 50).std, 0.0);
}

TEST(EvaluateMle, RegressionReportsR2) {
    std::string text = "x,y\n";
    for (int i = 0; i < 40; ++i) text += std::to_string(i) + "," + csv::format_number(2 * i + 0.5) + "\n";
    const auto ds = table(text, "y");
    const std::vector<std::uint64_t> seeds = {0, 1};
    const auto s = evaluate_mle(ds, ds, seeds, {});
    EXPECT_EQ(s.metric, "r2");
    EXPECT_GT(s.mean, 0.9);
}
