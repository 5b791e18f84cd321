#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "scqpcr/concordance.hpp"

using namespace scqpcr;

namespace {

// Two genes over unit "u": single-cell wells plus one 100-cell aggregate.
ConcordanceDataset tiny_dataset() {
    std::vector<WellMeta> sw;
    Grid<double> set(4, 2, 0.0);
    Grid<char> sdet(4, 2, 0);
    for (int i = 0; i < 4; ++i) {
        sw.push_back({ "s" + std::to_string(i), "u", "g", 1 });
    }
    set(0, 0) = 3;
    sdet(0, 0) = 1;
    set(1, 0) = 1;
    sdet(1, 0) = 1;
    set(2, 1) = 2;
    sdet(2, 1) = 1;

    Grid<double> aet(1, 2, 0.0);
    Grid<char> adet(1, 2, 1);
    aet(0, 0) = std::log2(250.0);
    aet(0, 1) = std::log2(100.0);
    return ConcordanceDataset{
        ExpressionMatrix(sw, { "A", "B" }, set, sdet),
        ExpressionMatrix({ { "a0", "u", "g", 100 } }, { "A", "B" }, aet, adet),
    };
}

}

TEST(InsilicoAverage, IncludeAndExcludeZeros) {
    const auto d = tiny_dataset();
    EXPECT_DOUBLE_EQ(*insilico_average(d.single, 0, "u"), (8.0 + 2.0) / 4);
    ConcordanceOptions ex;
    ex.zero_mode = ZeroMode::exclude;
    EXPECT_DOUBLE_EQ(*insilico_average(d.single, 0, "u", ex), 5.0);
    ConcordanceOptions nominal;
    nominal.divisor = DivisorMode::nominal;
    nominal.nominal_cells = 10;
    EXPECT_DOUBLE_EQ(*insilico_average(d.single, 0, "u", nominal), 1.0);
    EXPECT_THROW(insilico_average(d.single, 0, "missing"), InsufficientData);
}

TEST(InsilicoAverage, ExcludeUndefinedWhenNothingExpressed) {
    const auto d = tiny_dataset();
    const auto none = select_wells(d.single, std::vector<std::size_t>{ 0, 1 });
    ConcordanceOptions ex;
    ex.zero_mode = ZeroMode::exclude;
    EXPECT_FALSE(insilico_average(none, 1, "u", ex));
    EXPECT_EQ(*insilico_average(none, 1, "u"), 0.0);
}

TEST(AggregateAverage, PerCellScale) {
    const auto d = tiny_dataset();
    EXPECT_NEAR(*aggregate_average(d.hundred, 0, "u"), 2.5, 1e-12);
    EXPECT_NEAR(*aggregate_average(d.hundred, 1, "u"), 1.0, 1e-12);
    EXPECT_FALSE(aggregate_average(d.hundred, 0, "other"));
}

TEST(Ccc, IdenticalVectorsGiveOne) {
    const std::vector<double> x{ 1, 2, 3, 4, 5.5 };
    EXPECT_NEAR(*ccc(x, x), 1.0, 1e-15);
}

TEST(Ccc, ShiftFormula) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> d(0, 2);
    for (double c : { 0.5, 1.0, 3.0, -2.0 }) {
        std::vector<double> x(200), y(200);
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = d(rng);
            y[i] = x[i] + c;
        }
        double mean = 0, s2 = 0;
        for (auto v : x) {
            mean += v;
        }
        mean /= x.size();
        for (auto v : x) {
            s2 += (v - mean) * (v - mean);
        }
        s2 /= x.size();
        EXPECT_NEAR(*ccc(x, y), 2 * s2 / (2 * s2 + c * c), 1e-10);
    }
}

TEST(Ccc, BoundedByPearson) {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> d(0, 1);
    std::uniform_real_distribution<double> u(-2, 2);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> x(15), y(15);
        const double a = u(rng), b = u(rng);
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = d(rng);
            y[i] = a * x[i] + b + d(rng);
        }
        EXPECT_LE(std::abs(*ccc(x, y)), std::abs(*pearson(x, y)) + 1e-12);
        EXPECT_NEAR(*ccc(x, y), *ccc(y, x), 1e-12);
    }
}

TEST(Ccc, UndefinedCases) {
    const std::vector<double> one{ 1 };
    EXPECT_FALSE(ccc(one, one));
    const std::vector<double> flat{ 2, 2, 2 };
    EXPECT_FALSE(ccc(flat, flat));
    EXPECT_FALSE(pearson(flat, std::vector<double>{ 1, 2, 3 }));
    EXPECT_THROW(ccc(std::vector<double>{ 1, 2 }, std::vector<double>{ 1 }), DomainError);
}

TEST(Wss, HandComputed) {
    std::vector<ConcordancePair> pairs(2);
    pairs[0].y1 = 3;
    pairs[0].y100 = 1;
    pairs[0].n_jk = 2;
    pairs[1].y1 = 0;
    pairs[1].y100 = 7;
    pairs[1].n_jk = 0;
    EXPECT_NEAR(wss(pairs), 2 * 1.0 / 2, 1e-15);
    pairs[1].n_jk = 1;
    EXPECT_NEAR(wss(pairs), (2 * 1.0 + 1 * 9.0) / 2, 1e-15);
    EXPECT_THROW(wss(std::vector<ConcordancePair>{}), InsufficientData);
}

TEST(Wss, NonNegativeAndZeroOnAgreement) {
    const auto d = tiny_dataset();
    auto pairs = concordance_pairs(d.single, d.hundred, matched_units(d.single, d.hundred));
    ASSERT_EQ(pairs.size(), 2u);
    EXPECT_GE(wss(pairs), 0.0);
    for (auto& p : pairs) {
        p.y100 = *p.y1;
    }
    EXPECT_EQ(wss(pairs), 0.0);
}

TEST(ConcordancePairs, CountsAndAverages) {
    const auto d = tiny_dataset();
    const auto pairs = concordance_pairs(d.single, d.hundred, matched_units(d.single, d.hundred));
    EXPECT_EQ(pairs[0].gene, "A");
    EXPECT_EQ(pairs[0].n_jk, 2u);
    EXPECT_EQ(pairs[0].n_wells, 4u);
    EXPECT_DOUBLE_EQ(*pairs[0].y1, 2.5);
    EXPECT_EQ(pairs[1].n_jk, 1u);
    EXPECT_DOUBLE_EQ(*pairs[1].y1, 1.0);
    const auto report = concordance_report(d.single, d.hundred);
    EXPECT_NEAR(report.wss, 0.0, 1e-20);
    EXPECT_NEAR(*report.r_c, 1.0, 1e-12);
}

TEST(ConcordancePairs, EmptyUnitAfterFiltering) {
    const auto d = tiny_dataset();
    const auto none = select_wells(d.single, std::vector<std::size_t>{});
    const std::vector<std::string> ids{ "u" };
    const auto inc = concordance_pairs(none, d.hundred, ids);
    ASSERT_EQ(inc.size(), 2u);
    EXPECT_EQ(*inc[0].y1, 0.0);
    ConcordanceOptions ex;
    ex.zero_mode = ZeroMode::exclude;
    EXPECT_FALSE(concordance_pairs(none, d.hundred, ids, ex)[0].y1);
}

TEST(ConcordanceReport, FilteredKeepsUnfilteredWeights) {
    const auto d = tiny_dataset();
    const std::vector<std::string> ids{ "u" };
    const auto kept = select_wells(d.single, std::vector<std::size_t>{ 1, 2, 3 });
    const auto report = filtered_concordance_report(d.single, kept, d.hundred, ids);
    ASSERT_EQ(report.pairs.size(), 2u);
    EXPECT_EQ(report.pairs[0].n_jk, 2u);
    EXPECT_EQ(report.pairs[0].n_wells, 4u);
    EXPECT_DOUBLE_EQ(*report.pairs[0].y1, 2.0 / 3);
    EXPECT_DOUBLE_EQ(*report.pairs[1].y1, 4.0 / 3);

    const auto same = filtered_concordance_report(d.single, d.single, d.hundred, ids);
    const auto direct = concordance_report(d.single, d.hundred);
    EXPECT_EQ(same.wss, direct.wss);
    EXPECT_EQ(same.r_c, direct.r_c);

    const auto other = select_wells(d.single, std::vector<std::size_t>{ 0 });
    ExpressionMatrix one_gene(other.wells(), { "A" }, Grid<double>(1, 1, 3.0), Grid<char>(1, 1, 1));
    EXPECT_THROW(filtered_concordance_report(d.single, one_gene, d.hundred, ids), DomainError);
}

TEST(ConcordanceReport, NoSharedPairsThrows) {
    const auto d = tiny_dataset();
    EXPECT_THROW(concordance_report(d.single, d.single), InsufficientData);
}

TEST(ThresholdGrid, DefaultShape) {
    const auto g = default_threshold_grid();
    ASSERT_EQ(g.size(), 49u);
    EXPECT_EQ(g.front().t_z, 3.0);
    EXPECT_EQ(g.front().t_zeta, 3.0);
    EXPECT_TRUE(std::isinf(g.back().t_z));
    EXPECT_TRUE(std::isinf(g.back().t_zeta));
}

TEST(ThresholdGrid, TiesBreakTowardLargerThresholds) {
    const std::vector<ConcordanceDataset> data{ tiny_dataset() };
    const auto grid = default_threshold_grid();
    const auto res = optimize_thresholds(data, grid);
    EXPECT_EQ(res.points.size(), grid.size());
    EXPECT_TRUE(std::isinf(res.best().thresholds.t_z));
    EXPECT_TRUE(std::isinf(res.best().thresholds.t_zeta));
}

TEST(ThresholdGrid, ThreadCountDoesNotChangeResult) {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> d(12, 1);
    std::bernoulli_distribution b(0.6);
    std::vector<WellMeta> wells;
    Grid<double> et(60, 4, 0.0);
    Grid<char> det(60, 4, 0);
    for (int i = 0; i < 60; ++i) {
        wells.push_back({ "s" + std::to_string(i), i < 30 ? "u1" : "u2", "g", 1 });
        for (int j = 0; j < 4; ++j) {
            if (b(rng)) {
                det(i, j) = 1;
                et(i, j) = d(rng) + (i % 7 == 0 ? 6 : 0);
            }
        }
    }
    Grid<double> aet(2, 4, 16.0);
    Grid<char> adet(2, 4, 1);
    const std::vector<ConcordanceDataset> data{ {
        ExpressionMatrix(wells, { "A", "B", "C", "D" }, et, det),
        ExpressionMatrix({ { "a1", "u1", "g", 100 }, { "a2", "u2", "g", 100 } }, { "A", "B", "C", "D" }, aet, adet),
    } };
    const auto grid = default_threshold_grid();
    const auto one = optimize_thresholds(data, grid, FilterConfig(), ConcordanceOptions(), 1);
    const auto four = optimize_thresholds(data, grid, FilterConfig(), ConcordanceOptions(), 4);
    ASSERT_EQ(one.points.size(), four.points.size());
    EXPECT_EQ(one.argmin, four.argmin);
    for (std::size_t g = 0; g < grid.size(); ++g) {
        EXPECT_EQ(one.points[g].mean_wss, four.points[g].mean_wss);
    }
}

TEST(ThresholdGrid, EmptyInputsThrow) {
    const std::vector<ConcordanceDataset> none;
    const auto grid = default_threshold_grid();
    EXPECT_THROW(optimize_thresholds(none, grid), InsufficientData);
    const std::vector<ConcordanceDataset> data{ tiny_dataset() };
    EXPECT_THROW(optimize_thresholds(data, std::vector<ThresholdPair>{}), InsufficientData);
}
