#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "scqpcr/qc.hpp"
#include "test_helpers.hpp"

using namespace scqpcr;
using scqpcr::testing::column_matrix;
using scqpcr::testing::detection_matrix;

namespace {

ExpressionMatrix fraction_matrix(const std::vector<int>& detected, int genes) {
    std::vector<std::vector<bool> > rows;
    for (int d : detected) {
        std::vector<bool> row(genes, false);
        for (int j = 0; j < d; ++j) {
            row[j] = true;
        }
        rows.push_back(row);
    }
    return detection_matrix(rows);
}

ExpressionMatrix normal_plate(std::size_t wells, std::size_t genes, std::uint64_t seed, double pi = 0.8) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> et(15, 1);
    std::bernoulli_distribution det(pi);
    std::vector<WellMeta> meta;
    std::vector<std::string> names;
    for (std::size_t j = 0; j < genes; ++j) {
        names.push_back("G" + std::to_string(j));
    }
    Grid<double> values(wells, genes, 0.0);
    Grid<char> mask(wells, genes, 0);
    for (std::size_t i = 0; i < wells; ++i) {
        meta.push_back({ "w" + std::to_string(i), i % 2 ? "u2" : "u1", "g", 1 });
        for (std::size_t j = 0; j < genes; ++j) {
            if (det(rng)) {
                mask(i, j) = 1;
                values(i, j) = et(rng);
            }
        }
        mask(i, 0) = 1;
        values(i, 0) = et(rng);
    }
    return ExpressionMatrix(std::move(meta), std::move(names), std::move(values), std::move(mask));
}

}

TEST(Median, OddEvenEmpty) {
    EXPECT_EQ(median({ 3, 1, 2 }), 2.0);
    EXPECT_EQ(median({ 4, 1, 3, 2 }), 2.5);
    EXPECT_TRUE(std::isnan(median({})));
    const auto mm = median_mad({ 10, 12, 14 });
    EXPECT_EQ(mm.median, 12.0);
    EXPECT_EQ(mm.mad, 2.0);
}

TEST(RobustZ, ThreeValueExample) {
    const auto z = robust_z(column_matrix({ 10, 12, 14 }));
    EXPECT_NEAR(*z(0, 0), -0.6756756756756757, 1e-12);
    EXPECT_EQ(*z(1, 0), 0.0);
    EXPECT_NEAR(*z(2, 0), 0.6756756756756757, 1e-12);
}

TEST(RobustZ, UndefinedWhereUnexpressed) {
    const auto z = robust_z(column_matrix({ 10, std::nullopt, 14, 12 }));
    EXPECT_FALSE(z(1, 0).has_value());
    EXPECT_EQ(*z(3, 0), 0.0);
}

TEST(RobustZ, ZeroMadGivesInfinityOffMedian) {
    const auto z = robust_z(column_matrix({ 10, 10, 10, 11 }));
    EXPECT_EQ(*z(0, 0), 0.0);
    EXPECT_EQ(*z(3, 0), std::numeric_limits<double>::infinity());
    const auto low = robust_z(column_matrix({ 10, 10, 10, 9 }));
    EXPECT_EQ(*low(3, 0), -std::numeric_limits<double>::infinity());
}

TEST(RobustZ, ScaleAndShiftInvariant) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> d(12, 2);
    std::vector<std::optional<double> > base, moved;
    for (int i = 0; i < 25; ++i) {
        const double v = d(rng);
        base.push_back(v);
        moved.push_back(0.5 * v + 3);
    }
    const auto z0 = robust_z(column_matrix(base));
    const auto z1 = robust_z(column_matrix(moved));
    for (std::size_t i = 0; i < base.size(); ++i) {
        EXPECT_NEAR(*z0(i, 0), *z1(i, 0), 1e-9);
    }
}

TEST(RobustZ, MedianValueScoresZero) {
    const auto z = robust_z(column_matrix({ 3, 9, 5, 7, 1 }));
    EXPECT_EQ(*z(2, 0), 0.0);
}

TEST(DetectionZeta, FourFractionExample) {
    const auto em = fraction_matrix({ 16, 25, 36, 49 }, 100);
    const auto s = detection_zeta(em);
    const double f[] = { 0.41151684606748806, 0.5235987755982989, 0.6435011087932844, 0.775397496610753 };
    const double zeta[] = { -1.002124688108375, -0.34922666324297635, 0.3492266632429757, 1.1175475821760605 };
    for (int i = 0; i < 4; ++i) {
        EXPECT_NEAR(s.f[i], f[i], 1e-12);
        EXPECT_NEAR(s.zeta[i], zeta[i], 1e-9);
    }
}

TEST(DetectionZeta, FBounds) {
    const auto s = detection_zeta(fraction_matrix({ 0, 100, 50 }, 100));
    EXPECT_EQ(s.f[0], 0.0);
    EXPECT_NEAR(s.f[1], std::acos(-1.0) / 2, 1e-15);
}

TEST(DetectionZeta, NeedsTwoWells) {
    EXPECT_THROW(detection_zeta(fraction_matrix({ 3 }, 4)), InsufficientData);
}

TEST(FilterWells, RemovesNullWellsFirst) {
    const auto em = detection_matrix({
        { true, true, false },
        { false, false, false },
        { true, false, true },
        { true, true, true },
    });
    FilterConfig cfg;
    cfg.t_zeta = std::numeric_limits<double>::infinity();
    const auto res = filter_wells(em, cfg);
    EXPECT_EQ(res.report.removed_null, (std::vector<std::string>{ "w1" }));
    EXPECT_EQ(res.report.scores.size(), 3u);
    EXPECT_EQ(res.matrix.n_wells(), 3u);
    for (std::size_t i = 0; i < res.matrix.n_wells(); ++i) {
        EXPECT_GT(res.matrix.detected_in_well(i), 0u);
    }
}

TEST(FilterWells, SingleOffendingValueRemovesWell) {
    std::vector<std::optional<double> > col;
    std::mt19937_64 rng(11);
    std::normal_distribution<double> d(15, 1);
    for (int i = 0; i < 30; ++i) {
        col.push_back(d(rng));
    }
    col[7] = 30;
    const auto res = filter_wells(column_matrix(col));
    ASSERT_EQ(res.report.removed_outlier.size(), 1u);
    EXPECT_EQ(res.report.removed_outlier[0].well_id, "w7");
    EXPECT_TRUE(res.report.removed_outlier[0].by_z);
    EXPECT_EQ(res.report.removed_outlier[0].gene, std::optional<std::string>("G"));
    EXPECT_EQ(res.matrix.n_wells(), 29u);
}

TEST(FilterWells, ZetaRemoval) {
    std::vector<int> counts(40, 50);
    for (int i = 0; i < 40; ++i) {
        counts[i] += (i % 5) - 2;
    }
    counts[3] = 100;
    const auto res = filter_wells(fraction_matrix(counts, 100));
    ASSERT_EQ(res.report.removed_outlier.size(), 1u);
    EXPECT_EQ(res.report.removed_outlier[0].well_id, "w3");
    EXPECT_TRUE(res.report.removed_outlier[0].by_zeta);
    EXPECT_FALSE(res.report.removed_outlier[0].by_z);
}

TEST(FilterWells, InfiniteThresholdsOnlyDropNulls) {
    FilterConfig cfg;
    cfg.t_z = cfg.t_zeta = std::numeric_limits<double>::infinity();
    const auto em = normal_plate(40, 6, 5);
    const auto res = filter_wells(em, cfg);
    EXPECT_TRUE(res.report.removed_outlier.empty());
    EXPECT_EQ(res.matrix.n_wells() + res.report.removed_null.size(), em.n_wells());
}

TEST(FilterWells, MonotoneInThresholds) {
    const auto em = normal_plate(60, 8, 9, 0.6);
    const double grid[] = { 1, 2, 3, 5, 9, std::numeric_limits<double>::infinity() };
    std::size_t prev = 0;
    for (double t : grid) {
        FilterConfig cfg;
        cfg.t_z = cfg.t_zeta = t;
        const auto n = filter_wells(em, cfg).matrix.n_wells();
        EXPECT_GE(n, prev);
        prev = n;
    }
}

TEST(FilterWells, KeptIsSubsetInOrder) {
    const auto em = normal_plate(50, 5, 21);
    FilterConfig cfg;
    cfg.t_z = cfg.t_zeta = 1.5;
    const auto res = filter_wells(em, cfg);
    std::size_t cursor = 0;
    for (const auto& w : res.matrix.wells()) {
        while (cursor < em.n_wells() && em.well(cursor).well_id != w.well_id) {
            ++cursor;
        }
        ASSERT_LT(cursor, em.n_wells());
    }
    EXPECT_EQ(res.report.kept.size() + res.report.removed_outlier.size() + res.report.removed_null.size(), em.n_wells());
}

TEST(FilterWells, SparseGenesExemptFromZ) {
    std::vector<std::optional<double> > col(20, std::nullopt);
    col[0] = 10;
    col[1] = 30;
    std::vector<WellMeta> wells;
    Grid<double> et(20, 2, 0.0);
    Grid<char> det(20, 2, 0);
    for (int i = 0; i < 20; ++i) {
        wells.push_back({ "w" + std::to_string(i), "u", "g", 1 });
        det(i, 0) = 1;
        et(i, 0) = 12;
        if (col[i]) {
            det(i, 1) = 1;
            et(i, 1) = *col[i];
        }
    }
    FilterConfig cfg;
    cfg.t_zeta = std::numeric_limits<double>::infinity();
    const auto res = filter_wells(ExpressionMatrix(wells, { "A", "B" }, et, det), cfg);
    EXPECT_TRUE(res.report.removed_outlier.empty());
}

TEST(FilterWells, PerUnitScoringDiffersFromWholeMatrix) {
    std::vector<WellMeta> wells;
    Grid<double> et(20, 1, 0.0);
    Grid<char> det(20, 1, 1);
    for (int i = 0; i < 20; ++i) {
        const bool second = i >= 10;
        wells.push_back({ "w" + std::to_string(i), second ? "u2" : "u1", "g", 1 });
        et(i, 0) = (second ? 20 : 10) + 0.1 * (i % 5 - 2);
    }
    const ExpressionMatrix em(wells, { "G" }, et, det);
    FilterConfig cfg;
    cfg.t_z = 3;
    EXPECT_TRUE(filter_wells(em, cfg).report.removed_outlier.empty());
    et(0, 0) = 14;
    const ExpressionMatrix shifted(wells, { "G" }, et, det);
    EXPECT_EQ(filter_wells(shifted, cfg).report.removed_outlier.size(), 1u);
    cfg.scope = QcScope::whole_matrix;
    EXPECT_TRUE(filter_wells(shifted, cfg).report.removed_outlier.empty());
}

TEST(FilterWells, ErrorPaths) {
    const auto empty = select_wells(column_matrix({ 1, 2 }), std::vector<std::size_t>{});
    EXPECT_THROW(filter_wells(empty), InsufficientData);
    FilterConfig cfg;
    cfg.t_z = 0;
    EXPECT_THROW(filter_wells(column_matrix({ 1, 2, 3 }), cfg), DomainError);
    cfg.t_z = -1;
    EXPECT_THROW(filter_wells(column_matrix({ 1, 2, 3 }), cfg), DomainError);
}

TEST(HousekeeperR2, PerfectAndErrors) {
    Grid<double> et(4, 2, 0.0);
    Grid<char> det(4, 2, 1);
    std::vector<WellMeta> wells;
    for (int i = 0; i < 4; ++i) {
        wells.push_back({ "w" + std::to_string(i), "u", "g", 1 });
        et(i, 0) = 10 + i;
        et(i, 1) = 20 - 2 * i;
    }
    const ExpressionMatrix em(wells, { "A", "B" }, et, det);
    EXPECT_NEAR(housekeeper_r2(em, "A", "B"), 1.0, 1e-12);
    EXPECT_THROW(housekeeper_r2(em, "A", "Z"), MalformedInput);
    det(0, 1) = det(1, 1) = 0;
    EXPECT_THROW(housekeeper_r2(ExpressionMatrix(wells, { "A", "B" }, et, det), "A", "B"), InsufficientData);
}
