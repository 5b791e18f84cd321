#ifndef SCQPCR_CONCORDANCE_HPP
#define SCQPCR_CONCORDANCE_HPP

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "error.hpp"
#include "parallel.hpp"
#include "qc.hpp"

/**
 * @file concordance.hpp
 *
 * @brief Agreement between in-silico single-cell averages and per-cell
 * scaled aggregate measurements.
 *
 * For each gene × unit, the in-silico average is the mean linear abundance of
 * the unit's single-cell wells, while the in-vitro average is the aggregate
 * well's linear abundance divided by its cell count. Both are compared on the
 * shifted-log scale `log2(y + 1)`, where a value of zero is a zero abundance.
 */

namespace scqpcr {

enum class ZeroMode {
    /** Undetected wells count as exact zeros. */
    include,
    /** Undetected wells are dropped from the average. */
    exclude
};

enum class DivisorMode {
    /** Divide by the number of single-cell wells actually present. */
    actual,
    /** Divide by a fixed nominal cell count. */
    nominal
};

struct ConcordanceOptions {
    ZeroMode zero_mode = ZeroMode::include;
    DivisorMode divisor = DivisorMode::actual;
    int nominal_cells = 100;
};

inline double shifted_log(double y) {
    return std::log2(y + 1);
}

/**
 * @brief Mean linear abundance of `gene` over the single-cell wells of `unit`.
 *
 * Returns `std::nullopt` in exclude mode when no well expresses the gene.
 *
 * @throws InsufficientData if the unit has no single-cell wells.
 */
inline std::optional<double> insilico_average(const ExpressionMatrix& em, std::size_t gene, const std::string& unit, const ConcordanceOptions& opts = ConcordanceOptions()) {
    double sum = 0;
    std::size_t wells = 0, expressed = 0;
    for (std::size_t i = 0; i < em.n_wells(); ++i) {
        const auto& w = em.well(i);
        if (w.unit_id != unit || w.n_cells != 1) {
            continue;
        }
        ++wells;
        if (em.expressed(i, gene)) {
            ++expressed;
            sum += em.linear(i, gene);
        }
    }
    if (wells == 0) {
        throw InsufficientData("unit '" + unit + "' has no single-cell wells");
    }
    if (opts.zero_mode == ZeroMode::exclude) {
        if (expressed == 0) {
            return std::nullopt;
        }
        return sum / static_cast<double>(expressed);
    }
    const double divisor = opts.divisor == DivisorMode::nominal ? static_cast<double>(opts.nominal_cells) : static_cast<double>(wells);
    return sum / divisor;
}

/**
 * @brief Mean over the unit's aggregate wells of linear abundance divided by cell count.
 */
inline std::optional<double> aggregate_average(const ExpressionMatrix& em, std::size_t gene, const std::string& unit) {
    double sum = 0;
    std::size_t wells = 0;
    for (std::size_t i = 0; i < em.n_wells(); ++i) {
        const auto& w = em.well(i);
        if (w.unit_id != unit || w.n_cells <= 1) {
            continue;
        }
        ++wells;
        sum += em.linear(i, gene) / static_cast<double>(w.n_cells);
    }
    if (wells == 0) {
        return std::nullopt;
    }
    return sum / static_cast<double>(wells);
}

namespace detail {

struct PairedMoments {
    double n = 0, mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
};

inline PairedMoments paired_moments(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw DomainError("paired vectors must have equal length");
    }
    PairedMoments m;
    m.n = static_cast<double>(x.size());
    if (x.empty()) {
        return m;
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        m.mx += x[i];
        m.my += y[i];
    }
    m.mx /= m.n;
    m.my /= m.n;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - m.mx, dy = y[i] - m.my;
        m.sxx += dx * dx;
        m.syy += dy * dy;
        m.sxy += dx * dy;
    }
    m.sxx /= m.n;
    m.syy /= m.n;
    m.sxy /= m.n;
    return m;
}

}

/**
 * @brief Lin's concordance correlation coefficient with divide-by-n moments.
 *
 * Undefined for fewer than two pairs or when both inputs are the same constant.
 *
 * @throws DomainError if the lengths differ.
 */
inline std::optional<double> ccc(std::span<const double> x, std::span<const double> y) {
    const auto m = detail::paired_moments(x, y);
    if (x.size() < 2) {
        return std::nullopt;
    }
    const double gap = m.mx - m.my;
    const double denom = m.sxx + m.syy + gap * gap;
    if (!(denom > 0)) {
        return std::nullopt;
    }
    return 2 * m.sxy / denom;
}

inline std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
    const auto m = detail::paired_moments(x, y);
    if (x.size() < 2 || !(m.sxx > 0) || !(m.syy > 0)) {
        return std::nullopt;
    }
    return m.sxy / std::sqrt(m.sxx * m.syy);
}

struct ConcordancePair {
    std::string gene;
    std::string unit;
    /** In-silico average; undefined in exclude mode when nothing is expressed. */
    std::optional<double> y1;
    /** Aggregate abundance divided by its cell count. */
    double y100 = 0;
    /** Expressing single-cell wells. */
    std::size_t n_jk = 0;
    /** Single-cell wells. */
    std::size_t n_wells = 0;
};

/**
 * @brief Weighted mean squared shifted-log gap, `sum n_jk (log2(y1+1) - log2(y100+1))^2 / JK`.
 *
 * `JK` counts every pair; pairs with an undefined `y1` have `n_jk = 0` and add nothing.
 *
 * @throws InsufficientData for an empty list.
 */
inline double wss(std::span<const ConcordancePair> pairs) {
    if (pairs.empty()) {
        throw InsufficientData("weighted sum of squares needs at least one gene x unit pair");
    }
    double total = 0;
    for (const auto& p : pairs) {
        if (!p.y1 || p.n_jk == 0) {
            continue;
        }
        const double gap = shifted_log(*p.y1) - shifted_log(p.y100);
        total += static_cast<double>(p.n_jk) * gap * gap;
    }
    return total / static_cast<double>(pairs.size());
}

/**
 * @brief Units with single-cell wells in `single` and aggregate wells in `hundred`, in `single`'s order.
 */
inline std::vector<std::string> matched_units(const ExpressionMatrix& single, const ExpressionMatrix& hundred) {
    std::vector<std::string> out;
    for (const auto& u : units(single)) {
        bool has_single = false, has_aggregate = false;
        for (const auto& w : single.wells()) {
            has_single = has_single || (w.unit_id == u && w.n_cells == 1);
        }
        for (const auto& w : hundred.wells()) {
            has_aggregate = has_aggregate || (w.unit_id == u && w.n_cells > 1);
        }
        if (has_single && has_aggregate) {
            out.push_back(u);
        }
    }
    return out;
}

/**
 * @brief Pair every gene present in both matrices with every unit in `unit_ids`.
 *
 * A unit with no remaining single-cell wells (e.g. all filtered away) has zero
 * expression in include mode, and an undefined average in exclude mode.
 */
inline std::vector<ConcordancePair> concordance_pairs(const ExpressionMatrix& single, const ExpressionMatrix& hundred, std::span<const std::string> unit_ids, const ConcordanceOptions& opts = ConcordanceOptions()) {
    std::vector<ConcordancePair> out;
    for (std::size_t j = 0; j < single.n_genes(); ++j) {
        const auto& gene = single.genes()[j];
        const auto hj = hundred.gene_index(gene);
        if (!hj) {
            continue;
        }
        for (const auto& unit : unit_ids) {
            const auto agg = aggregate_average(hundred, *hj, unit);
            if (!agg) {
                continue;
            }
            ConcordancePair pair;
            pair.gene = gene;
            pair.unit = unit;
            pair.y100 = *agg;
            for (std::size_t i = 0; i < single.n_wells(); ++i) {
                const auto& w = single.well(i);
                if (w.unit_id == unit && w.n_cells == 1) {
                    ++pair.n_wells;
                    pair.n_jk += single.expressed(i, j);
                }
            }
            if (pair.n_wells > 0) {
                pair.y1 = insilico_average(single, j, unit, opts);
            } else if (opts.zero_mode == ZeroMode::include) {
                pair.y1 = 0.0;
            }
            out.push_back(std::move(pair));
        }
    }
    return out;
}

struct ConcordanceReport {
    std::vector<ConcordancePair> pairs;
    /** Over pairs with a defined in-silico average, on the shifted-log scale. */
    std::optional<double> r_c;
    double wss = 0;
};

inline ConcordanceReport summarize_pairs(std::vector<ConcordancePair> pairs) {
    if (pairs.empty()) {
        throw InsufficientData("no gene x unit pairs are shared by the single-cell and aggregate data");
    }
    ConcordanceReport out;
    std::vector<double> x, y;
    for (const auto& p : pairs) {
        if (p.y1) {
            x.push_back(shifted_log(*p.y1));
            y.push_back(shifted_log(p.y100));
        }
    }
    out.r_c = ccc(x, y);
    out.wss = wss(pairs);
    out.pairs = std::move(pairs);
    return out;
}

/**
 * @brief Per-pair table, concordance correlation and weighted sum of squares.
 *
 * `unit_ids` defaults to `matched_units(single, hundred)`.
 *
 * @throws InsufficientData if no gene × unit pair is shared.
 */
inline ConcordanceReport concordance_report(const ExpressionMatrix& single, const ExpressionMatrix& hundred, const ConcordanceOptions& opts = ConcordanceOptions(), std::optional<std::vector<std::string> > unit_ids = std::nullopt) {
    const auto ids = unit_ids ? std::move(*unit_ids) : matched_units(single, hundred);
    return summarize_pairs(concordance_pairs(single, hundred, ids, opts));
}

/**
 * @brief Report for filtered single-cell wells, weighted by the unfiltered data.
 *
 * Averages come from `filtered`; every pair keeps the positive-well count
 * `n_jk` of `unfiltered`, so removing wells does not by itself shrink the
 * weighted sum of squares.
 *
 * @throws InsufficientData if no gene × unit pair is shared.
 */
inline ConcordanceReport filtered_concordance_report(const ExpressionMatrix& unfiltered, const ExpressionMatrix& filtered, const ExpressionMatrix& hundred, std::span<const std::string> unit_ids, const ConcordanceOptions& opts = ConcordanceOptions()) {
    auto pairs = concordance_pairs(filtered, hundred, unit_ids, opts);
    const auto before = concordance_pairs(unfiltered, hundred, unit_ids, opts);
    if (pairs.size() != before.size()) {
        throw DomainError("filtered and unfiltered matrices must share genes");
    }
    for (std::size_t p = 0; p < pairs.size(); ++p) {
        pairs[p].n_jk = before[p].n_jk;
        pairs[p].n_wells = before[p].n_wells;
    }
    return summarize_pairs(std::move(pairs));
}

struct ConcordanceDataset {
    /** Single-cell wells (`n_cells == 1`). */
    ExpressionMatrix single;
    /** Aggregate wells (`n_cells > 1`). */
    ExpressionMatrix hundred;
};

struct ThresholdPair {
    double t_z;
    double t_zeta;
};

/** `{3, 5, 7, 9, 11, 15, inf}` squared, row-major in `t_z`. */
inline std::vector<ThresholdPair> default_threshold_grid() {
    const double inf = std::numeric_limits<double>::infinity();
    const double values[] = { 3, 5, 7, 9, 11, 15, inf };
    std::vector<ThresholdPair> out;
    for (auto tz : values) {
        for (auto tzeta : values) {
            out.push_back(ThresholdPair{ tz, tzeta });
        }
    }
    return out;
}

struct ThresholdGridPoint {
    ThresholdPair thresholds;
    double mean_wss = 0;
    std::vector<double> wss;
    std::vector<std::optional<double> > r_c;
};

struct ThresholdGridResult {
    std::vector<ThresholdGridPoint> points;
    std::size_t argmin = 0;

    const ThresholdGridPoint& best() const { return points.at(argmin); }
};

/**
 * @brief Evaluate the well filter over a grid of thresholds.
 *
 * At each grid point, single-cell wells of every dataset are filtered and the
 * weighted sum of squares against the aggregates is recomputed; the result
 * is averaged over datasets. Gene × unit pairs and their weights `n_jk` are
 * fixed from the unfiltered data. The argmin is the smallest mean; ties (within a relative 1e-12) go to
 * the larger `t_z`, then the larger `t_zeta`.
 *
 * @throws InsufficientData if the grid or dataset list is empty.
 */
inline ThresholdGridResult optimize_thresholds(std::span<const ConcordanceDataset> datasets, std::span<const ThresholdPair> grid, const FilterConfig& base = FilterConfig(), const ConcordanceOptions& opts = ConcordanceOptions(), unsigned threads = 1) {
    if (datasets.empty() || grid.empty()) {
        throw InsufficientData("threshold optimization needs at least one dataset and one grid point");
    }
    std::vector<std::vector<std::string> > unit_ids;
    unit_ids.reserve(datasets.size());
    for (const auto& d : datasets) {
        unit_ids.push_back(matched_units(d.single, d.hundred));
    }

    ThresholdGridResult result;
    result.points.resize(grid.size());
    parallel_for(grid.size(), threads, [&](std::size_t g) {
        auto& point = result.points[g];
        point.thresholds = grid[g];
        FilterConfig cfg = base;
        cfg.t_z = grid[g].t_z;
        cfg.t_zeta = grid[g].t_zeta;
        double total = 0;
        for (std::size_t d = 0; d < datasets.size(); ++d) {
            const auto filtered = filter_wells(datasets[d].single, cfg);
            const auto report = filtered_concordance_report(datasets[d].single, filtered.matrix, datasets[d].hundred, unit_ids[d], opts);
            point.wss.push_back(report.wss);
            point.r_c.push_back(report.r_c);
            total += report.wss;
        }
        point.mean_wss = total / static_cast<double>(datasets.size());
    });

    for (std::size_t g = 1; g < result.points.size(); ++g) {
        const auto& cand = result.points[g];
        const auto& best = result.points[result.argmin];
        const double tol = 1e-12 * std::max(std::abs(cand.mean_wss), std::abs(best.mean_wss));
        if (cand.mean_wss < best.mean_wss - tol) {
            result.argmin = g;
        } else if (std::abs(cand.mean_wss - best.mean_wss) <= tol) {
            const auto& a = cand.thresholds;
            const auto& b = best.thresholds;
            if (a.t_z > b.t_z || (a.t_z == b.t_z && a.t_zeta > b.t_zeta)) {
                result.argmin = g;
            }
        }
    }
    return result;
}

}

#endif
