#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "refine/dataset.hpp"
#include "support.hpp"

using namespace refine;
using testing_support::table;

TEST(ParseCsv, InfersKindsAndClassificationTarget) {
    const auto ds = table("a,b,label\n1,x,0\n2,y,1\n");
    ASSERT_EQ(ds.size(), 2u);
    EXPECT_EQ(ds.schema.columns[0].kind, ColumnKind::numeric);
    EXPECT_EQ(ds.schema.columns[1].kind, ColumnKind::categorical);
    EXPECT_EQ(ds.schema.target, 2u);
    EXPECT_EQ(ds.schema.task, Task::classification);
    EXPECT_EQ(ds.schema.num_classes(), 2u);
}

TEST(ParseCsv, HeaderOnlyGivesZeroRows) {
    Schema s = table("a,b,label\n1,x,0\n2,y,1\n").schema;
    EXPECT_EQ(parse_csv("a,b,label\n", s).size(), 0u);
}

TEST(ParseCsv, ArityViolationReportsRow) {
    const Schema s = table("a,b,label\n1,x,0\n2,y,1\n").schema;
    try {
        parse_csv("a,b,label\n1,x\n", s);
        FAIL() << "expected CsvError";
    } catch (const CsvError& e) {
        EXPECT_EQ(e.row(), 1u);
    }
}

TEST(ParseCsv, RejectsTypeMismatchMissingValuesAndDuplicateHeaders) {
    const Schema s = table("a,b,label\n1,x,0\n2,y,1\n").schema;
    EXPECT_THROW(parse_csv("a,b,label\nq,x,0\n", s), InputError);
    EXPECT_THROW(parse_csv("a,b,label\n1,,0\n", s), InputError);
    EXPECT_THROW(table("a,a,label\n1,2,0\n"), InputError);
}

TEST(ParseCsv, ReordersColumnsToSchemaOrder) {
    const Schema s = table("a,b,label\n1,x,0\n2,y,1\n").schema;
    const auto ds = parse_csv("label,a,b\n1,5,y\n", s);
    EXPECT_EQ(ds.number(0, 0), 5.0);
    EXPECT_EQ(ds.category(0, 1), "y");
}

TEST(InferSchema, NumericOnlyWhenEveryCellParses) {
    const auto ds = table("c,d,t\n1.5,1,a\n2,2,b\n3e1,x,a\n");
    EXPECT_EQ(ds.schema.columns[0].kind, ColumnKind::numeric);
    EXPECT_EQ(ds.schema.columns[1].kind, ColumnKind::categorical);
}

TEST(InferSchema, IntegerTargetAboveClassCapIsRegression) {
    std::string text = "x,y\n";
    for (int i = 0; i < 25; ++i) text += std::to_string(i) + "," + std::to_string(i) + "\n";
    EXPECT_EQ(table(text).schema.task, Task::regression);
    std::string few = "x,y\n";
    for (int i = 0; i < 25; ++i) few += std::to_string(i) + "," + std::to_string(i % 20) + "\n";
    EXPECT_EQ(table(few).schema.task, Task::classification);
}

TEST(InferSchema, NamedTargetMustExist) {
    EXPECT_THROW(table("a,b\n1,2\n", "nope"), InputError);
    EXPECT_EQ(table("a,b\n1,x\n2,y\n", "a").schema.target, 0u);
}

TEST(Dataset, CsvRoundTripIsIdentical) {
    const auto ds = table("a,b,label\n1.25,\"x, y\",0\n-3,plain,1\n0.1,\"q\"\"\",1\n");
    const auto again = parse_csv(to_csv(ds), ds.schema);
    EXPECT_EQ(again, ds);
}

TEST(ColumnStats, PopulationFormulaAndFrequencies) {
    const auto ds = table("n,c,t\n2,x,a\n4,x,b\n");
    const auto st = column_stats(ds);
    EXPECT_EQ(st.numeric[0]->min, 2.0);
    EXPECT_EQ(st.numeric[0]->max, 4.0);
    EXPECT_EQ(st.numeric[0]->mean, 3.0);
    EXPECT_EQ(st.numeric[0]->std, 1.0);
    EXPECT_EQ(st.frequencies[1].at("x"), 2u);
    const auto constant = column_stats(table("n,t\n5,a\n5,b\n5,a\n"));
    EXPECT_EQ(constant.numeric[0]->std, 0.0);
    const auto cats = column_stats(table("c,t\nx,a\nx,b\ny,a\n"));
    EXPECT_EQ(cats.frequencies[0], (std::map<std::string, std::size_t>{{"x", 2}, {"y", 1}}));
}

TEST(ColumnStats, EmptyDatasetIsAnError) {
    const auto ds = table("n,t\n1,a\n2,b\n");
    EXPECT_THROW(column_stats(ds.subset(std::vector<std::size_t>{})), InputError);
}

namespace {
Dataset balanced(std::size_t per_class_a, std::size_t per_class_b) {
    std::string text = "x,label\n";
    for (std::size_t i = 0; i < per_class_a; ++i) text += std::to_string(i) + ",a\n";
    for (std::size_t i = 0; i < per_class_b; ++i) text += std::to_string(1000 + i) + ",b\n";
    return table(text);
}
}  // namespace

TEST(StratifiedSplit, EqualClassCountsAndPartition) {
    const auto ds = balanced(50, 50);
    const auto split = stratified_split(ds, 30, 7);
    ASSERT_EQ(split.train.size(), 30u);
    std::size_t a = 0;
    for (std::size_t r = 0; r < split.train.size(); ++r) a += split.train.label(r) == 0;
    EXPECT_EQ(a, 15u);
    EXPECT_EQ(split.test.size(), 70u);
    std::multiset<double> all, parts;
    for (std::size_t r = 0; r < ds.size(); ++r) all.insert(ds.number(r, 0));
    for (const auto* d : {&split.train, &split.test}) {
        for (std::size_t r = 0; r < d->size(); ++r) parts.insert(d->number(r, 0));
    }
    EXPECT_EQ(all, parts);
}

TEST(StratifiedSplit, SameSeedSameSplit) {
    const auto ds = balanced(50, 50);
    EXPECT_EQ(stratified_split(ds, 30, 3).train, stratified_split(ds, 30, 3).train);
    EXPECT_NE(stratified_split(ds, 30, 3).train, stratified_split(ds, 30, 4).train);
}

TEST(StratifiedSplit, InsufficientClassIsAnError) {
    EXPECT_THROW(stratified_split(balanced(10, 90), 30, 0), InputError);
}

TEST(StratifiedSplit, RegressionCanExhaustRows) {
    std::string text = "x,y\n";
    for (int i = 0; i < 30; ++i) text += std::to_string(i) + "," + std::to_string(i * 0.5) + "\n";
    const auto ds = table(text);
    ASSERT_EQ(ds.schema.task, Task::regression);
    EXPECT_EQ(stratified_split(ds, 30, 1).test.size(), 0u);
}

TEST(SchemaSidecar, RoundTrips) {
    auto ds = table("a,b,label\n1,x,0\n2,y,1\n");
    ds.schema.columns[0].description = "age in years";
    const auto back = schema_from_json(schema_to_json(ds.schema));
    EXPECT_EQ(back.columns[0].description, "age in years");
    EXPECT_EQ(back.target, ds.schema.target);
    EXPECT_EQ(back.task, ds.schema.task);
}
