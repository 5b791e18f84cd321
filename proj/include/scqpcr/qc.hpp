#ifndef SCQPCR_QC_HPP
#define SCQPCR_QC_HPP

#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "error.hpp"
#include "robust.hpp"

/**
 * @file qc.hpp
 *
 * @brief Robust outlier scores and the well filter.
 *
 * Two scores are used to screen wells:
 *
 * - `z`, a robust z-score of each expressed cell × gene value relative to the
 *   median and MAD of that gene over its expressed wells. Large values flag
 *   contamination or amplification artifacts in individual reactions.
 * - `zeta`, a robust z-score of `f = asin(sqrt(fraction of genes detected))`
 *   across wells. Large values flag wells with an implausible number of
 *   detected genes, e.g. doublets or partially failed lysis.
 *
 * The filter first drops null wells (no gene detected), then scores the
 * remaining wells and removes every well containing any `|z| > t_z` or with
 * `|zeta| > t_zeta`.
 */

namespace scqpcr {

/** Where medians and MADs are taken when filtering. */
enum class QcScope {
    /** Separately within each biological unit. */
    per_unit,
    /** Over all wells of the matrix at once. */
    whole_matrix
};

struct FilterConfig {
    double t_z = 9;
    double t_zeta = 9;
    double k = default_mad_scale;
    QcScope scope = QcScope::per_unit;

    void validate() const {
        if (!(t_z > 0) || !(t_zeta > 0) || !(k > 0)) {
            throw DomainError("filter thresholds and the MAD scale must be strictly positive");
        }
    }
};

/** Genes expressed in fewer wells than this never trigger a z-based removal. */
inline constexpr std::size_t min_expressed_for_z = 3;

struct DetectionScores {
    /** `asin(sqrt(mean detection))` per well, in [0, pi/2]. */
    std::vector<double> f;
    std::vector<double> zeta;
};

struct QcScores {
    /** Defined exactly where the gene is expressed; infinite when the gene's MAD is zero and the value is off-median. */
    Grid<std::optional<double> > z;
    std::vector<double> f;
    std::vector<double> zeta;
};

namespace detail {

inline void robust_z_over(const ExpressionMatrix& em, std::span<const std::size_t> wells, double k, Grid<std::optional<double> >& out) {
    std::vector<double> values;
    for (std::size_t j = 0; j < em.n_genes(); ++j) {
        values.clear();
        for (auto i : wells) {
            if (em.expressed(i, j)) {
                values.push_back(em.et_grid()(i, j));
            }
        }
        if (values.empty()) {
            continue;
        }
        const auto stats = median_mad(values);
        for (auto i : wells) {
            if (em.expressed(i, j)) {
                out(i, j) = robust_score(em.et_grid()(i, j), stats, k);
            }
        }
    }
}

inline double detection_f(const ExpressionMatrix& em, std::size_t i) {
    if (em.n_genes() == 0) {
        return 0;
    }
    const double frac = static_cast<double>(em.detected_in_well(i)) / static_cast<double>(em.n_genes());
    return std::asin(std::sqrt(frac));
}

inline std::vector<double> zeta_over(const std::vector<double>& f, double k) {
    const auto stats = median_mad(f);
    std::vector<double> out;
    out.reserve(f.size());
    for (auto v : f) {
        out.push_back(robust_score(v, stats, k));
    }
    return out;
}

inline std::vector<std::vector<std::size_t> > scope_groups(const ExpressionMatrix& em, std::span<const std::size_t> wells, QcScope scope) {
    if (scope == QcScope::whole_matrix) {
        return { std::vector<std::size_t>(wells.begin(), wells.end()) };
    }
    std::vector<std::string> ids;
    std::vector<std::vector<std::size_t> > groups;
    for (auto i : wells) {
        const auto& unit = em.well(i).unit_id;
        std::size_t g = 0;
        while (g < ids.size() && ids[g] != unit) {
            ++g;
        }
        if (g == ids.size()) {
            ids.push_back(unit);
            groups.emplace_back();
        }
        groups[g].push_back(i);
    }
    return groups;
}

}

/**
 * @brief Robust z-scores of expressed values, gene by gene over all wells.
 *
 * Genes with no expressed wells have no defined entries.
 */
inline Grid<std::optional<double> > robust_z(const ExpressionMatrix& em, double k = default_mad_scale) {
    Grid<std::optional<double> > out(em.n_wells(), em.n_genes());
    std::vector<std::size_t> all(em.n_wells());
    std::iota(all.begin(), all.end(), std::size_t{0});
    detail::robust_z_over(em, all, k, out);
    return out;
}

/**
 * @brief Detection-fraction scores across all wells.
 *
 * The detection fraction of a well is taken over every gene of the matrix.
 *
 * @throws InsufficientData with fewer than 2 wells.
 */
inline DetectionScores detection_zeta(const ExpressionMatrix& em, double k = default_mad_scale) {
    if (em.n_wells() < 2) {
        throw InsufficientData("detection scores need at least 2 wells");
    }
    DetectionScores out;
    out.f.reserve(em.n_wells());
    for (std::size_t i = 0; i < em.n_wells(); ++i) {
        out.f.push_back(detail::detection_f(em, i));
    }
    out.zeta = detail::zeta_over(out.f, k);
    return out;
}

inline QcScores qc_scores(const ExpressionMatrix& em, double k = default_mad_scale) {
    auto det = detection_zeta(em, k);
    return QcScores{ robust_z(em, k), std::move(det.f), std::move(det.zeta) };
}

struct OutlierRemoval {
    std::string well_id;
    bool by_z = false;
    bool by_zeta = false;
    /** Gene with the largest `|z|` in the well, when `by_z`. */
    std::optional<std::string> gene;
    std::optional<double> z;
    double zeta = 0;
};

/** Scores of a well that survived step 1. */
struct WellScore {
    std::string well_id;
    double f = 0;
    double zeta = 0;
    /** Largest `|z|` over genes eligible for z-based removal. */
    std::optional<double> max_abs_z;
    std::optional<std::string> max_z_gene;
};

struct FilterReport {
    std::vector<std::string> removed_null;
    std::vector<OutlierRemoval> removed_outlier;
    std::vector<std::string> kept;
    /** One entry per non-null well, in input order. */
    std::vector<WellScore> scores;
};

struct FilterResult {
    ExpressionMatrix matrix;
    FilterReport report;
};

/**
 * @brief Remove null and outlying wells.
 *
 * Null wells are removed first; scores are then computed on the remaining
 * wells, separately per unit unless `cfg.scope` says otherwise. A single
 * offending cell × gene value removes its whole well. Genes expressed in fewer
 * than `min_expressed_for_z` wells of a scoring group are not used for
 * z-based removal, and groups with a single well are never removed on `zeta`.
 *
 * @throws InsufficientData if `em` has no wells.
 */
inline FilterResult filter_wells(const ExpressionMatrix& em, const FilterConfig& cfg = FilterConfig()) {
    cfg.validate();
    if (em.n_wells() == 0) {
        throw InsufficientData("cannot filter a matrix with no wells");
    }

    FilterReport report;
    std::vector<std::size_t> live;
    for (std::size_t i = 0; i < em.n_wells(); ++i) {
        if (em.detected_in_well(i) == 0) {
            report.removed_null.push_back(em.well(i).well_id);
        } else {
            live.push_back(i);
        }
    }

    const auto nw = em.n_wells(), ng = em.n_genes();
    Grid<std::optional<double> > z(nw, ng);
    std::vector<double> zeta(nw, 0.0), f(nw, 0.0);
    Grid<char> eligible(nw, ng, 0);

    for (const auto& group : detail::scope_groups(em, live, cfg.scope)) {
        detail::robust_z_over(em, group, cfg.k, z);
        for (std::size_t j = 0; j < ng; ++j) {
            std::size_t count = 0;
            for (auto i : group) {
                count += em.expressed(i, j);
            }
            if (count >= min_expressed_for_z) {
                for (auto i : group) {
                    eligible(i, j) = 1;
                }
            }
        }

        std::vector<double> gf;
        gf.reserve(group.size());
        for (auto i : group) {
            f[i] = detail::detection_f(em, i);
            gf.push_back(f[i]);
        }
        if (group.size() >= 2) {
            const auto gz = detail::zeta_over(gf, cfg.k);
            for (std::size_t x = 0; x < group.size(); ++x) {
                zeta[group[x]] = gz[x];
            }
        }
    }

    std::vector<std::size_t> keep;
    for (auto i : live) {
        WellScore score;
        score.well_id = em.well(i).well_id;
        score.f = f[i];
        score.zeta = zeta[i];
        for (std::size_t j = 0; j < ng; ++j) {
            if (eligible(i, j) && z(i, j)) {
                const double a = std::abs(*z(i, j));
                if (!score.max_abs_z || a > *score.max_abs_z) {
                    score.max_abs_z = a;
                    score.max_z_gene = em.genes()[j];
                }
            }
        }

        const bool by_z = score.max_abs_z && *score.max_abs_z > cfg.t_z;
        const bool by_zeta = std::abs(score.zeta) > cfg.t_zeta;
        if (by_z || by_zeta) {
            OutlierRemoval removal;
            removal.well_id = score.well_id;
            removal.by_z = by_z;
            removal.by_zeta = by_zeta;
            if (by_z) {
                removal.gene = score.max_z_gene;
                removal.z = score.max_abs_z;
            }
            removal.zeta = score.zeta;
            report.removed_outlier.push_back(std::move(removal));
        } else {
            report.kept.push_back(score.well_id);
            keep.push_back(i);
        }
        report.scores.push_back(std::move(score));
    }

    return FilterResult{ select_wells(em, keep), std::move(report) };
}

/**
 * @brief Squared Pearson correlation of two genes' `et` over wells expressing both.
 *
 * @throws InsufficientData with fewer than 3 co-expressing wells or a constant gene.
 */
inline double housekeeper_r2(const ExpressionMatrix& em, const std::string& gene_a, const std::string& gene_b) {
    const auto a = em.gene_index(gene_a), b = em.gene_index(gene_b);
    if (!a || !b) {
        throw MalformedInput("unknown gene '" + (a ? gene_b : gene_a) + "'");
    }
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < em.n_wells(); ++i) {
        if (em.expressed(i, *a) && em.expressed(i, *b)) {
            xs.push_back(em.et_grid()(i, *a));
            ys.push_back(em.et_grid()(i, *b));
        }
    }
    if (xs.size() < 3) {
        throw InsufficientData("fewer than 3 wells express both '" + gene_a + "' and '" + gene_b + "'");
    }
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx, dy = ys[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0 || syy == 0) {
        throw InsufficientData("gene '" + (sxx == 0 ? gene_a : gene_b) + "' is constant over co-expressing wells");
    }
    return std::min(1.0, sxy * sxy / (sxx * syy));
}

}

#endif
