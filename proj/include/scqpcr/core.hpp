#ifndef SCQPCR_CORE_HPP
#define SCQPCR_CORE_HPP

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "error.hpp"

/**
 * @file core.hpp
 *
 * @brief Plate and expression matrices, and the cycle-threshold to
 * expression-threshold transform.
 *
 * The instrument reports a cycle threshold `ct` for every well × gene reaction
 * that crossed the fluorescence threshold within `c_max` cycles, and N/A
 * otherwise. We work with the complement `et = c_max - ct`, which is
 * proportional to log2 mRNA abundance. Undetected reactions are treated as
 * unexpressed, i.e., a linear abundance of exactly zero. This is stored as an
 * explicit detection mask rather than a sentinel in the `et` grid, so
 * downstream code can either count undetected wells as zeros or drop them.
 */

namespace scqpcr {

/**
 * @brief Dense row-major grid, indexed by (well, gene).
 */
template<typename T>
struct Grid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;

    Grid() = default;
    Grid(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}

    T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    bool operator==(const Grid&) const = default;
};

struct WellMeta {
    std::string well_id;
    /** Biological unit, e.g. one subject × treatment combination. */
    std::string unit_id;
    /** Experimental group label, e.g. "stim" or "unstim". */
    std::string group;
    /** Cells loaded into the well; 1 for single-cell wells, 100 for aggregates. */
    int n_cells = 1;

    bool operator==(const WellMeta&) const = default;
};

inline constexpr int default_c_max = 40;

namespace detail {

inline void check_unique_ids(const std::vector<WellMeta>& wells, const std::vector<std::string>& genes) {
    std::unordered_set<std::string> seen;
    for (const auto& w : wells) {
        if (!seen.insert(w.well_id).second) {
            throw MalformedInput("duplicate well identifier '" + w.well_id + "'");
        }
        if (w.n_cells < 1) {
            throw MalformedInput("well '" + w.well_id + "' has n_cells < 1");
        }
    }
    seen.clear();
    for (const auto& g : genes) {
        if (!seen.insert(g).second) {
            throw MalformedInput("duplicate gene identifier '" + g + "'");
        }
    }
}

}

/**
 * @brief Raw cycle thresholds as exported by the instrument.
 *
 * An empty optional marks an undetected reaction.
 */
struct PlateMatrix {
    std::vector<WellMeta> wells;
    std::vector<std::string> genes;
    Grid<std::optional<double> > ct;
    int c_max = default_c_max;

    /**
     * @throws MalformedInput if the grid shape, identifiers or any present
     * `ct` value is inconsistent; the message names the offending well and gene.
     */
    void validate() const {
        if (c_max <= 0) {
            throw MalformedInput("c_max must be a positive integer");
        }
        if (ct.rows != wells.size() || ct.cols != genes.size() || ct.data.size() != wells.size() * genes.size()) {
            throw MalformedInput("cycle-threshold grid dimensions do not match wells x genes");
        }
        detail::check_unique_ids(wells, genes);
        for (std::size_t i = 0; i < ct.rows; ++i) {
            for (std::size_t j = 0; j < ct.cols; ++j) {
                const auto& value = ct(i, j);
                if (value && !(*value > 0 && *value <= c_max)) {
                    throw MalformedInput("ct value " + std::to_string(*value) + " for well '" + wells[i].well_id +
                        "', gene '" + genes[j] + "' is outside (0, " + std::to_string(c_max) + "]");
                }
            }
        }
    }
};

/**
 * @brief One well's observation for a single gene.
 *
 * `et` is meaningful only when `expressed` is true.
 */
struct Measurement {
    double et = 0;
    bool expressed = false;
};

/**
 * @brief Expression thresholds with a detection mask.
 *
 * Immutable after construction. Where a reaction is detected,
 * `0 <= et < c_max`; elsewhere the linear abundance is exactly zero.
 */
class ExpressionMatrix {
public:
    ExpressionMatrix() = default;

    ExpressionMatrix(std::vector<WellMeta> wells, std::vector<std::string> genes, Grid<double> et, Grid<char> detected, int c_max = default_c_max) :
        my_wells(std::move(wells)), my_genes(std::move(genes)), my_et(std::move(et)), my_detected(std::move(detected)), my_c_max(c_max)
    {
        const auto nw = my_wells.size(), ng = my_genes.size();
        if (my_et.rows != nw || my_et.cols != ng || my_detected.rows != nw || my_detected.cols != ng ||
            my_et.data.size() != nw * ng || my_detected.data.size() != nw * ng)
        {
            throw MalformedInput("expression grid dimensions do not match wells x genes");
        }
        detail::check_unique_ids(my_wells, my_genes);
        for (std::size_t x = 0; x < my_et.data.size(); ++x) {
            if (my_detected.data[x]) {
                const double v = my_et.data[x];
                if (!(v >= 0 && v < my_c_max)) {
                    throw MalformedInput("et value for well '" + my_wells[x / ng].well_id + "', gene '" + my_genes[x % ng] + "' is outside [0, c_max)");
                }
            } else {
                my_et.data[x] = 0;
            }
        }
    }

    std::size_t n_wells() const noexcept { return my_wells.size(); }
    std::size_t n_genes() const noexcept { return my_genes.size(); }
    int c_max() const noexcept { return my_c_max; }

    const std::vector<WellMeta>& wells() const noexcept { return my_wells; }
    const std::vector<std::string>& genes() const noexcept { return my_genes; }
    const WellMeta& well(std::size_t i) const { return my_wells[i]; }

    bool expressed(std::size_t i, std::size_t j) const { return my_detected(i, j) != 0; }

    std::optional<double> et(std::size_t i, std::size_t j) const {
        if (!expressed(i, j)) {
            return std::nullopt;
        }
        return my_et(i, j);
    }

    Measurement measurement(std::size_t i, std::size_t j) const { return Measurement{ my_et(i, j), expressed(i, j) }; }

    /** Linear abundance 2^et, or exactly 0 when undetected. */
    double linear(std::size_t i, std::size_t j) const { return expressed(i, j) ? std::exp2(my_et(i, j)) : 0.0; }

    std::optional<std::size_t> gene_index(const std::string& gene) const {
        for (std::size_t j = 0; j < my_genes.size(); ++j) {
            if (my_genes[j] == gene) {
                return j;
            }
        }
        return std::nullopt;
    }

    /** Number of genes detected in well `i`. */
    std::size_t detected_in_well(std::size_t i) const {
        std::size_t n = 0;
        for (std::size_t j = 0; j < n_genes(); ++j) {
            n += expressed(i, j);
        }
        return n;
    }

    const Grid<double>& et_grid() const noexcept { return my_et; }
    const Grid<char>& detection_grid() const noexcept { return my_detected; }

    bool operator==(const ExpressionMatrix&) const = default;

private:
    std::vector<WellMeta> my_wells;
    std::vector<std::string> my_genes;
    Grid<double> my_et;
    Grid<char> my_detected;
    int my_c_max = default_c_max;
};

/**
 * @brief Convert cycle thresholds to expression thresholds.
 *
 * Detected reactions get `et = c_max - ct`; a reaction crossing at exactly
 * `c_max` is detected with `et = 0`.
 *
 * @throws MalformedInput if the plate is inconsistent or any `ct` lies outside `(0, c_max]`.
 */
inline ExpressionMatrix et_transform(const PlateMatrix& plate) {
    plate.validate();
    const auto nw = plate.wells.size(), ng = plate.genes.size();
    Grid<double> et(nw, ng, 0.0);
    Grid<char> detected(nw, ng, 0);
    for (std::size_t x = 0; x < plate.ct.data.size(); ++x) {
        if (const auto& ct = plate.ct.data[x]) {
            et.data[x] = plate.c_max - *ct;
            detected.data[x] = 1;
        }
    }
    return ExpressionMatrix(plate.wells, plate.genes, std::move(et), std::move(detected), plate.c_max);
}

/**
 * @brief Inverse of `et_transform()`, used when writing plates back out.
 */
inline PlateMatrix to_plate(const ExpressionMatrix& em) {
    PlateMatrix plate;
    plate.wells = em.wells();
    plate.genes = em.genes();
    plate.c_max = em.c_max();
    plate.ct = Grid<std::optional<double> >(em.n_wells(), em.n_genes());
    for (std::size_t i = 0; i < em.n_wells(); ++i) {
        for (std::size_t j = 0; j < em.n_genes(); ++j) {
            if (em.expressed(i, j)) {
                plate.ct(i, j) = em.c_max() - em.et_grid()(i, j);
            }
        }
    }
    return plate;
}

inline Grid<double> to_linear(const ExpressionMatrix& em) {
    Grid<double> out(em.n_wells(), em.n_genes(), 0.0);
    for (std::size_t i = 0; i < em.n_wells(); ++i) {
        for (std::size_t j = 0; j < em.n_genes(); ++j) {
            out(i, j) = em.linear(i, j);
        }
    }
    return out;
}

/**
 * @brief Subset to the wells at the given indices, in the given order.
 */
inline ExpressionMatrix select_wells(const ExpressionMatrix& em, std::span<const std::size_t> indices) {
    const auto ng = em.n_genes();
    std::vector<WellMeta> wells;
    wells.reserve(indices.size());
    Grid<double> et(indices.size(), ng, 0.0);
    Grid<char> detected(indices.size(), ng, 0);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const auto i = indices[r];
        wells.push_back(em.well(i));
        for (std::size_t j = 0; j < ng; ++j) {
            et(r, j) = em.et_grid()(i, j);
            detected(r, j) = em.detection_grid()(i, j);
        }
    }
    return ExpressionMatrix(std::move(wells), em.genes(), std::move(et), std::move(detected), em.c_max());
}

/**
 * @brief Wells whose metadata satisfies `predicate`, in their original order.
 *
 * An empty result is legal.
 */
template<typename Predicate>
ExpressionMatrix subset(const ExpressionMatrix& em, Predicate predicate) {
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < em.n_wells(); ++i) {
        if (predicate(em.well(i))) {
            keep.push_back(i);
        }
    }
    return select_wells(em, keep);
}

/**
 * @brief Observations of gene `j` over the wells at `indices`.
 */
inline std::vector<Measurement> gene_column(const ExpressionMatrix& em, std::size_t j, std::span<const std::size_t> indices) {
    std::vector<Measurement> out;
    out.reserve(indices.size());
    for (auto i : indices) {
        out.push_back(em.measurement(i, j));
    }
    return out;
}

inline std::vector<Measurement> gene_column(const ExpressionMatrix& em, std::size_t j) {
    std::vector<Measurement> out;
    out.reserve(em.n_wells());
    for (std::size_t i = 0; i < em.n_wells(); ++i) {
        out.push_back(em.measurement(i, j));
    }
    return out;
}

/**
 * @brief Distinct unit identifiers in order of first appearance.
 */
inline std::vector<std::string> units(const ExpressionMatrix& em) {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (const auto& w : em.wells()) {
        if (seen.insert(w.unit_id).second) {
            out.push_back(w.unit_id);
        }
    }
    return out;
}

/**
 * @brief Well indices grouped by unit, units in order of first appearance.
 */
inline std::vector<std::vector<std::size_t> > wells_by_unit(const ExpressionMatrix& em) {
    const auto ids = units(em);
    std::vector<std::vector<std::size_t> > out(ids.size());
    for (std::size_t i = 0; i < em.n_wells(); ++i) {
        for (std::size_t u = 0; u < ids.size(); ++u) {
            if (em.well(i).unit_id == ids[u]) {
                out[u].push_back(i);
                break;
            }
        }
    }
    return out;
}

}

#endif
