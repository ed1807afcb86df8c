#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "refine/filter.hpp"
#include "support.hpp"

using namespace refine;
using testing_support::table;

namespace {

std::string toy_text(std::uint64_t seed, std::size_t n, std::size_t copies_of_first = 0) {
    Rng rng(seed);
    std::string text = "a,b,k,y\n";
    std::string first;
    for (std::size_t i = 0; i < n; ++i) {
        const double a = std::round(rng.uniform(0, 10) * 100) / 100;
        const double b = std::round(rng.uniform(0, 10) * 100) / 100;
        const char* k = rng.below(2) ? "p" : "q";
        const bool pos = a + rng.uniform(-2, 2) > 5;
        std::string line = csv::format_number(a) + "," + csv::format_number(b) + "," + k + "," + (pos ? "hi" : "lo") + "\n";
        if (i == 0) first = line;
        text += line;
    }
    for (std::size_t i = 0; i < copies_of_first; ++i) text += first;
    return text;
}

std::vector<double> random_simplex(Rng& rng, std::size_t n) {
    std::vector<double> p(n);
    double z = 0;
    for (auto& v : p) {
        v = rng.below(4) == 0 ? 0.0 : rng.uniform();
        z += v;
    }
    if (z == 0) {
        p[0] = 1;
        return p;
    }
    for (auto& v : p) v /= z;
    return p;
}

}  // namespace

TEST(Gini, Examples) {
    const std::vector<double> point = {0, 0, 1, 0}, flat = {0.25, 0.25, 0.25, 0.25}, half = {0.5, 0, 0.5, 0};
    EXPECT_NEAR(gini(point), 1.0, 1e-12);
    EXPECT_NEAR(gini(flat), 0.0, 1e-12);
    EXPECT_NEAR(gini(half), 2.0 / 3.0, 1e-12);
    const std::vector<double> ramp = {0.1, 0.2, 0.3, 0.4};
    EXPECT_NEAR(gini(ramp), 1.0 / 3.0, 1e-12);
    const std::vector<double> single = {1};
    EXPECT_EQ(gini(single), 0.0);
    EXPECT_EQ(gini(std::vector<double>{}), 0.0);
    const std::vector<double> negative = {0.5, -0.1, 0.6};
    EXPECT_THROW(gini(negative), InputError);
}

TEST(Gini, MatchesPairwiseDifferenceOracle) {
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        Rng rng(seed);
        const auto n = 2 + rng.below(30);
        const auto p = random_simplex(rng, n);
        double pairs = 0;
        for (double x : p) {
            for (double y : p) pairs += std::abs(x - y);
        }
        const double oracle = pairs / (2.0 * static_cast<double>(n - 1));
        EXPECT_NEAR(gini(p), std::clamp(oracle, 0.0, 1.0), 1e-12) << seed;
        EXPECT_GE(gini(p), 0.0);
        EXPECT_LE(gini(p), 1.0);
    }
}

TEST(Gini, ExactAtTheBoundaries) {
    for (std::size_t n = 2; n <= 40; ++n) {
        const std::vector<double> uniform(n, 1.0 / static_cast<double>(n));
        EXPECT_EQ(gini(uniform), 0.0) << n;
        std::vector<double> one_hot(n, 0.0);
        one_hot[n / 2] = 1.0;
        EXPECT_EQ(gini(one_hot), 1.0) << n;
    }
}

TEST(Gini, InvariantToPermutation) {
    Rng rng(5);
    auto p = random_simplex(rng, 12);
    const double g = gini(p);
    for (int i = 0; i < 20; ++i) {
        rng.shuffle(p);
        EXPECT_DOUBLE_EQ(gini(p), g);
    }
}

TEST(EntropyRedundancy, Extremes) {
    const std::vector<double> point = {0, 1, 0}, flat = {0.5, 0.5};
    EXPECT_NEAR(entropy_redundancy(point), 1.0, 1e-12);
    EXPECT_NEAR(entropy_redundancy(flat), 0.0, 1e-12);
    EXPECT_EQ(parse_redundancy_metric("entropy"), RedundancyMetric::entropy);
    EXPECT_THROW(parse_redundancy_metric("variance"), ConfigError);
}

TEST(RetentionRatio, LogLinearAndClamped) {
    EXPECT_NEAR(retention_ratio(1.0), 0.55, 1e-12);
    EXPECT_NEAR(retention_ratio(std::exp(-1.0)), 0.40, 1e-12);
    EXPECT_NEAR(retention_ratio(0.5), 0.15 * std::log(0.5) + 0.55, 1e-12);
    EXPECT_EQ(retention_ratio(std::exp(-4.0)), 0.0);
    EXPECT_EQ(retention_ratio(0.0), 0.0);
    EXPECT_EQ(retention_ratio(1.0, 0.15, 1.2), 1.0);
}

TEST(HighFrequencyCount, SmallestPrefixReachingTheRatio) {
    const std::vector<double> p = {0.2, 0.5, 0.3};
    const std::vector<std::size_t> order = {1, 2, 0};
    EXPECT_EQ(high_frequency_count(p, order, 0.5), 1u);
    EXPECT_EQ(high_frequency_count(p, order, 0.8), 2u);
    EXPECT_EQ(high_frequency_count(p, order, 0.81), 3u);
    EXPECT_EQ(high_frequency_count(p, order, 0.0), 1u);
    const std::vector<double> thirds = {0.1, 0.2, 0.7};
    const std::vector<std::size_t> o2 = {2, 1, 0};
    EXPECT_EQ(high_frequency_count(thirds, o2, 1.0), 3u);
}

TEST(Dcr, RangeNormalisedNumericAndCategoricalMismatch) {
    const auto ds = table("a,b,k,y\n0,0,p,lo\n10,4,q,hi\n");
    const auto st = column_stats(ds);
    const Row x = {5.0, 0.0, std::string("p"), std::string("lo")};
    const Row y = {0.0, 0.0, std::string("q"), std::string("hi")};
    EXPECT_NEAR(dcr(x, y, ds.schema, st), (0.5 + 0 + 1) / 3, 1e-12);
    EXPECT_EQ(dcr(x, x, ds.schema, st), 0.0);
}

TEST(BuildProxy, CopiesLandOnTheirSeed) {
    const auto train = table(toy_text(1, 10));
    auto syn = train;
    for (int i = 0; i < 30; ++i) syn.rows.push_back(train.rows[3]);
    const auto proxy = build_proxy(syn, train, column_stats(train));
    EXPECT_EQ(proxy.counts[3], 31u);
    EXPECT_NEAR(std::accumulate(proxy.p.begin(), proxy.p.end(), 0.0), 1.0, 1e-12);
    EXPECT_EQ(proxy.sorted_desc[0], 3u);
    EXPECT_NEAR(proxy.ratio_1, gini(proxy.p), 0);
    const auto ids = partition_ids(proxy);
    EXPECT_EQ(ids.high.size() + ids.low.size(), syn.size());
    EXPECT_THROW(build_proxy(syn.subset(std::vector<std::size_t>{}), train, column_stats(train)), InputError);
}

TEST(BuildProxy, HighPartitionHoldsTheKMostFrequentSeeds) {
    const auto train = table(toy_text(2, 20));
    const auto syn = table(toy_text(3, 300, 100));
    const auto proxy = build_proxy(syn, train, column_stats(train), RedundancyMetric::gini, 3);
    ASSERT_GE(proxy.K, 1u);
    double top = 0;
    for (std::size_t i = 0; i < proxy.K; ++i) top += proxy.p[proxy.sorted_desc[i]];
    EXPECT_GE(top, proxy.ratio_1 - 1e-12);
    if (proxy.K > 1) EXPECT_LT(top - proxy.p[proxy.sorted_desc[proxy.K - 1]], proxy.ratio_1);
    const std::set<std::size_t> top_seeds(proxy.sorted_desc.begin(), proxy.sorted_desc.begin() + proxy.K);
    const auto ids = partition_ids(proxy);
    for (auto r : ids.high) EXPECT_TRUE(top_seeds.count(proxy.assignments[r]));
    for (auto r : ids.low) EXPECT_FALSE(top_seeds.count(proxy.assignments[r]));
    EXPECT_EQ(build_proxy(syn, train, column_stats(train), RedundancyMetric::gini, 1).assignments, proxy.assignments);
}

TEST(ChunkFilter, KeepsTheBestFloorShareOfChunks) {
    std::vector<double> c(100);
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = static_cast<double>(i % 7) / 6.0;
    const auto out = chunk_filter(c, 20, 0.5, 3);
    ASSERT_EQ(out.chunk_scores.size(), 5u);
    EXPECT_EQ(out.retained_chunks.size(), 2u);
    EXPECT_EQ(out.retained.size(), 40u);
    EXPECT_TRUE(std::is_sorted(out.retained.begin(), out.retained.end()));
    double worst_kept = 1e9;
    for (auto k : out.retained_chunks) worst_kept = std::min(worst_kept, out.chunk_scores[k]);
    for (std::size_t k = 0; k < 5; ++k) {
        if (std::find(out.retained_chunks.begin(), out.retained_chunks.end(), k) == out.retained_chunks.end()) {
            EXPECT_LE(out.chunk_scores[k], worst_kept);
        }
    }
}

TEST(ChunkFilter, ShortLastChunkAndScoreMeans) {
    std::vector<double> c(45, 1.0);
    const auto out = chunk_filter(c, 20, 0.4, 0);
    EXPECT_EQ(out.chunk_sizes, (std::vector<std::size_t>{20, 20, 5}));
    EXPECT_EQ(out.retained_chunks, (std::vector<std::size_t>{0}));
    for (double s : out.chunk_scores) EXPECT_DOUBLE_EQ(s, 1.0);
    EXPECT_TRUE(chunk_filter(c, 20, 0.3, 0).retained.empty());
    EXPECT_EQ(chunk_filter(c, 20, 1.0, 0).retained.size(), 45u);
    EXPECT_THROW(chunk_filter(c, 0, 0.5, 0), InputError);
    EXPECT_TRUE(chunk_filter(std::vector<double>{}, 5, 0.5, 0).retained.empty());
}

TEST(ChunkFilter, ChunkScoresMatchAnIndependentRecount) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        std::vector<double> c(10 + rng.below(200));
        for (auto& v : c) v = static_cast<double>(rng.below(11)) / 10;
        const std::size_t s = 1 + rng.below(40);
        const double r2 = rng.uniform();
        const auto out = chunk_filter(c, s, r2, seed);
        std::vector<std::size_t> order(c.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(seed);
        shuffle_rng.shuffle(order);
        const std::size_t chunks = (c.size() + s - 1) / s;
        ASSERT_EQ(out.chunk_scores.size(), chunks);
        for (std::size_t k = 0; k < chunks; ++k) {
            double sum = 0;
            std::size_t m = 0;
            for (std::size_t i = k * s; i < std::min(c.size(), (k + 1) * s); ++i, ++m) sum += c[order[i]];
            EXPECT_NEAR(out.chunk_scores[k], sum / static_cast<double>(m), 1e-12);
        }
        EXPECT_EQ(out.retained_chunks.size(), static_cast<std::size_t>(std::floor(r2 * static_cast<double>(chunks))));
    }
}

TEST(InstanceFilter, MeanMinusSigmaThresholds) {
    const std::vector<double> conf = {1, 2, 3, 4, 5}, unc(5, 0.0);
    const auto out = instance_filter(conf, unc, 1.0);
    EXPECT_NEAR(out.conf_thresh, 3 - std::sqrt(2.0), 1e-12);
    EXPECT_EQ(out.retained, (std::vector<std::size_t>{1, 2, 3, 4}));
    const std::vector<double> unc2 = {0.1, 0.1, 0.1, 0.1, 0.9};
    EXPECT_EQ(instance_filter(conf, unc2, 1.0).retained, (std::vector<std::size_t>{1, 2, 3}));
    EXPECT_EQ(instance_filter(conf, unc2, 0.0).retained, (std::vector<std::size_t>{2, 3}));
}

TEST(InstanceFilter, ZeroSpreadKeepsEverything) {
    const std::vector<double> conf(6, 0.1 + 0.2), unc(6, 0.3);
    EXPECT_EQ(instance_filter(conf, unc, 0.0).retained.size(), 6u);
    EXPECT_THROW(instance_filter(conf, std::vector<double>(5, 0.0), 1.0), InputError);
}

TEST(ScoreRows, RegressionConfidenceAndUncertainty) {
    ReferenceTrace tr;
    tr.task = Task::regression;
    tr.values = {{1.0, 3.0}};
    tr.targets = {2.0};
    const auto s = score_rows(tr, 1.0);
    EXPECT_DOUBLE_EQ(s.correctness[0], 1.0);
    EXPECT_DOUBLE_EQ(s.confidence[0], -1.0);
    EXPECT_DOUBLE_EQ(s.uncertainty[0], 1.0);
    EXPECT_DOUBLE_EQ(score_rows(tr, 0.5).correctness[0], 0.0);
}

TEST(ScoreRows, ClassificationUsesTrueLabelProbabilities) {
    ReferenceTrace tr;
    tr.values = {{0.2, 0.6, 0.7, 0.9}};
    tr.targets = {1};
    const auto s = score_rows(tr);
    EXPECT_DOUBLE_EQ(s.correctness[0], 0.75);
    EXPECT_DOUBLE_EQ(s.confidence[0], 0.6);
    EXPECT_NEAR(s.uncertainty[0], std::sqrt((0.16 + 0 + 0.01 + 0.09) / 4), 1e-12);
}

TEST(RegressionTolerance, MedianAbsoluteDeviation) {
    const auto ds = table("x,y\n1,1.5\n2,2.5\n3,3.5\n4,4.5\n5,100.5\n", "y");
    EXPECT_DOUBLE_EQ(regression_tolerance(ds), 1.0);
}

TEST(FilterParams, Validation) {
    FilterParams p;
    p.chunk_candidates.clear();
    EXPECT_THROW(p.validate(), ConfigError);
    p.chunk_candidates = {0};
    EXPECT_THROW(p.validate(), ConfigError);
}

namespace {

struct TuneFixture {
    Dataset train = table(toy_text(10, 30));
    Dataset syn = table(toy_text(11, 400, 150));
    BoostParams boost = [] {
        BoostParams b;
        b.rounds = 15;
        return b;
    }();
    ReferenceModel reference = train_staged(train, boost);
};

}  // namespace

TEST(Tune, PicksTheLowestSurprisal) {
    TuneFixture f;
    FilterParams p;
    const auto res = tune(f.train, f.syn, p, f.reference, f.boost, 2);
    const auto& rep = res.report;
    ASSERT_EQ(rep.candidates.size(), 9u);
    ASSERT_TRUE(rep.chosen);
    for (const auto& c : rep.candidates) {
        EXPECT_GE(c.surprisal, rep.candidates[*rep.chosen].surprisal);
        EXPECT_EQ(c.union_size, c.retained_high + c.retained_low);
        EXPECT_DOUBLE_EQ(c.ratio_2, retention_ratio(rep.ratio_1));
    }
    EXPECT_EQ(res.augmented.size(), rep.candidates[*rep.chosen].union_size);
    EXPECT_EQ(rep.high_rows + rep.low_rows, f.syn.size());
    EXPECT_GT(rep.pre_gini, 0.0);
    ASSERT_TRUE(rep.post_gini);

    const auto syn_csv = to_csv(f.syn);
    for (std::size_t r = 0; r < res.augmented.size(); ++r) {
        std::string line;
        for (std::size_t c = 0; c < res.augmented.rows[r].size(); ++c) {
            if (c) line += ",";
            line += cell_text(res.augmented.rows[r][c]);
        }
        EXPECT_NE(syn_csv.find(line + "\n"), std::string::npos);
    }

    const auto again = tune(f.train, f.syn, p, f.reference, f.boost, 1);
    EXPECT_EQ(to_csv(again.augmented), to_csv(res.augmented));
    EXPECT_EQ(report_to_json(again.report), report_to_json(rep));
}

TEST(Tune, TiesGoToTheSmallerChunkSize) {
    TuneFixture f;
    FilterParams p;
    // Full retention keeps every chunk, so all sizes yield the same union.
    p.B = 2.0;
    p.chunk_candidates = {60, 40, 50};
    const auto res = tune(f.train, f.syn, p, f.reference, f.boost);
    ASSERT_TRUE(res.report.chosen);
    EXPECT_EQ(res.report.chosen_size(), 40u);
    for (const auto& c : res.report.candidates) EXPECT_EQ(c.surprisal, res.report.candidates[0].surprisal);
}

TEST(Tune, SingleCandidateMatchesItsEntryInAFullSweep) {
    TuneFixture f;
    FilterParams full;
    const auto sweep = tune(f.train, f.syn, full, f.reference, f.boost);
    FilterParams one;
    one.chunk_candidates = {35};
    const auto single = tune(f.train, f.syn, one, f.reference, f.boost);
    ASSERT_EQ(single.report.candidates.size(), 1u);
    EXPECT_EQ(single.report.candidates[0].surprisal, sweep.report.candidates[3].surprisal);
    EXPECT_EQ(single.report.candidates[0].union_size, sweep.report.candidates[3].union_size);
}

TEST(Tune, EmptySyntheticSetIsAnError) {
    TuneFixture f;
    EXPECT_THROW(tune(f.train, f.syn.subset(std::vector<std::size_t>{}), {}, f.reference, f.boost), InputError);
}

TEST(ReportJson, NonFiniteSurprisalIsNull) {
    FilterReport r;
    r.candidates.resize(1);
    const auto j = report_to_json(r);
    EXPECT_TRUE(j["candidates"][0]["surprisal"].is_null());
    EXPECT_TRUE(j["chosen_chunk_size"].is_null());
    EXPECT_TRUE(j["post_gini"].is_null());
}

TEST(ProxyCsv, CountsAndFrequencies) {
    const std::vector<double> p = {0.75, 0.25};
    EXPECT_EQ(proxy_to_csv(p, 4), "seed,count,frequency\n0,3,0.75\n1,1,0.25\n");
}
