#ifndef SCQPCR_SIM_HPP
#define SCQPCR_SIM_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <iterator>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"
#include "difftest.hpp"
#include "error.hpp"
#include "parallel.hpp"
#include "qc.hpp"
#include "robust.hpp"

/**
 * @file sim.hpp
 *
 * @brief Synthetic plates from the zero-inflated log-normal model, and a
 * power harness for the differential expression tests.
 *
 * Every well × gene reaction draws from its own random stream, keyed by
 * `(seed, replicate, kind, group, well, gene)`. Output never depends on the
 * order in which reactions or replicates are generated, so results are
 * identical at any thread count.
 */

namespace scqpcr {

/**
 * @brief SplitMix64, used as a cheap per-stream engine.
 */
class StreamEngine {
public:
    using result_type = std::uint64_t;

    explicit StreamEngine(std::uint64_t state) : my_state(state) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        return finalize(my_state += 0x9e3779b97f4a7c15ULL);
    }

    static constexpr std::uint64_t finalize(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t my_state;
};

/** Derive an independent stream from a seed and a sequence of indices. */
inline StreamEngine make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
    std::uint64_t h = StreamEngine::finalize(seed ^ 0x6a09e667f3bcc909ULL);
    for (auto k : keys) {
        h = StreamEngine::finalize(h ^ StreamEngine::finalize(k + 0x9e3779b97f4a7c15ULL));
    }
    return StreamEngine(h);
}

struct GeneParams {
    double pi = 0.5;
    double mu = 12;
    double sigma = 1;
};

/** One unit × group cell of the design, with per-gene parameters. */
struct SimGroup {
    std::string unit_id = "u1";
    std::string group = "g0";
    std::vector<GeneParams> genes;
};

struct SimSpec {
    std::vector<std::string> genes;
    std::vector<SimGroup> groups;
    std::size_t wells_per_group = 90;
    std::size_t aggregate_wells_per_group = 1;
    int aggregate_cells = 100;
    std::uint64_t seed = 1;
    std::size_t replicates = 1;
    int c_max = default_c_max;

    void validate() const {
        if (c_max <= 0) {
            throw DomainError("c_max must be positive");
        }
        if (wells_per_group < 1) {
            throw DomainError("at least one well per group is required");
        }
        if (aggregate_cells < 1) {
            throw DomainError("aggregates need at least one cell");
        }
        std::set<std::pair<std::string, std::string> > seen;
        for (const auto& g : groups) {
            if (!seen.insert({ g.unit_id, g.group }).second) {
                throw DomainError("duplicate unit/group '" + g.unit_id + "/" + g.group + "' in simulation spec");
            }
            if (g.genes.size() != genes.size()) {
                throw DomainError("group '" + g.group + "' must give parameters for every gene");
            }
            for (const auto& p : g.genes) {
                if (!(p.pi >= 0 && p.pi <= 1) || !(p.sigma >= 0)) {
                    throw DomainError("gene parameters need 0 <= pi <= 1 and sigma >= 0");
                }
                if (!(p.mu >= 0 && p.mu < c_max)) {
                    throw DomainError("gene mean must lie in [0, c_max)");
                }
            }
        }
    }
};

struct SimulatedPlate {
    ExpressionMatrix matrix;
    /** Draws that fell outside [0, c_max) and were redrawn or clamped. */
    std::size_t truncated = 0;
};

namespace detail {

enum : std::uint64_t { stream_single = 0, stream_aggregate = 1, stream_contamination = 2 };

inline constexpr int max_redraws = 1000;

// Normal draw restricted to [0, c_max) by redrawing.
inline double draw_et(StreamEngine& eng, const GeneParams& p, int c_max, std::size_t& truncated) {
    if (p.sigma == 0) {
        return p.mu;
    }
    std::normal_distribution<double> normal(p.mu, p.sigma);
    for (int attempt = 0; attempt < max_redraws; ++attempt) {
        const double v = normal(eng);
        if (v >= 0 && v < c_max) {
            return v;
        }
        ++truncated;
    }
    return std::clamp(p.mu, 0.0, std::nextafter(static_cast<double>(c_max), 0.0));
}

inline bool draw_expressed(StreamEngine& eng, double pi) {
    std::bernoulli_distribution coin(pi);
    return coin(eng);
}

}

/**
 * @brief Single-cell plate: `wells_per_group` wells for every group of `spec`.
 *
 * Well identifiers are `<unit>.<group>.s<index>`.
 */
inline SimulatedPlate simulate_plate(const SimSpec& spec, std::size_t replicate = 0) {
    spec.validate();
    const auto ng = spec.genes.size();
    const auto nw = spec.wells_per_group * spec.groups.size();
    std::vector<WellMeta> wells;
    wells.reserve(nw);
    Grid<double> et(nw, ng, 0.0);
    Grid<char> detected(nw, ng, 0);
    SimulatedPlate out;

    std::size_t row = 0;
    for (std::size_t g = 0; g < spec.groups.size(); ++g) {
        const auto& group = spec.groups[g];
        for (std::size_t w = 0; w < spec.wells_per_group; ++w, ++row) {
            wells.push_back(WellMeta{ group.unit_id + "." + group.group + ".s" + std::to_string(w), group.unit_id, group.group, 1 });
            for (std::size_t j = 0; j < ng; ++j) {
                auto eng = make_stream(spec.seed, { replicate, detail::stream_single, g, w, j });
                if (detail::draw_expressed(eng, group.genes[j].pi)) {
                    detected(row, j) = 1;
                    et(row, j) = detail::draw_et(eng, group.genes[j], spec.c_max, out.truncated);
                }
            }
        }
    }
    out.matrix = ExpressionMatrix(std::move(wells), spec.genes, std::move(et), std::move(detected), spec.c_max);
    return out;
}

/**
 * @brief Aggregate plate: each well's linear signal is the sum of
 * `aggregate_cells` independent single-cell draws.
 *
 * Well identifiers are `<unit>.<group>.a<index>`. A well whose cells are all
 * unexpressed is undetected.
 */
inline SimulatedPlate simulate_aggregate(const SimSpec& spec, std::size_t replicate = 0) {
    spec.validate();
    const auto ng = spec.genes.size();
    const auto nw = spec.aggregate_wells_per_group * spec.groups.size();
    std::vector<WellMeta> wells;
    wells.reserve(nw);
    Grid<double> et(nw, ng, 0.0);
    Grid<char> detected(nw, ng, 0);
    SimulatedPlate out;
    const double ceiling = std::nextafter(static_cast<double>(spec.c_max), 0.0);

    std::size_t row = 0;
    for (std::size_t g = 0; g < spec.groups.size(); ++g) {
        const auto& group = spec.groups[g];
        for (std::size_t w = 0; w < spec.aggregate_wells_per_group; ++w, ++row) {
            wells.push_back(WellMeta{ group.unit_id + "." + group.group + ".a" + std::to_string(w), group.unit_id, group.group, spec.aggregate_cells });
            for (std::size_t j = 0; j < ng; ++j) {
                auto eng = make_stream(spec.seed, { replicate, detail::stream_aggregate, g, w, j });
                double total = 0;
                for (int c = 0; c < spec.aggregate_cells; ++c) {
                    if (detail::draw_expressed(eng, group.genes[j].pi)) {
                        total += std::exp2(detail::draw_et(eng, group.genes[j], spec.c_max, out.truncated));
                    }
                }
                if (total > 0) {
                    double value = std::log2(total);
                    if (value >= spec.c_max) {
                        value = ceiling;
                        ++out.truncated;
                    }
                    detected(row, j) = 1;
                    et(row, j) = value;
                }
            }
        }
    }
    out.matrix = ExpressionMatrix(std::move(wells), spec.genes, std::move(et), std::move(detected), spec.c_max);
    return out;
}

struct InjectedOutlier {
    std::size_t well;
    std::size_t gene;
};

/**
 * @brief Replace the given expressed values by `median + shift * k * MAD` of their gene.
 *
 * Medians and MADs are taken over the gene's expressed wells before any
 * replacement. Values are capped just below `c_max`.
 *
 * @throws DomainError if a target is not expressed.
 */
inline ExpressionMatrix inject_outliers(const ExpressionMatrix& em, std::span<const InjectedOutlier> targets, double shift, double k = default_mad_scale) {
    Grid<double> et = em.et_grid();
    const double ceiling = std::nextafter(static_cast<double>(em.c_max()), 0.0);
    for (const auto& t : targets) {
        if (!em.expressed(t.well, t.gene)) {
            throw DomainError("outliers may only be injected into expressed reactions");
        }
        std::vector<double> values;
        for (std::size_t i = 0; i < em.n_wells(); ++i) {
            if (em.expressed(i, t.gene)) {
                values.push_back(em.et_grid()(i, t.gene));
            }
        }
        const auto stats = median_mad(values);
        et(t.well, t.gene) = std::min(stats.median + shift * k * stats.mad, ceiling);
    }
    return ExpressionMatrix(em.wells(), em.genes(), std::move(et), em.detection_grid(), em.c_max());
}

/**
 * @brief Pick `n_wells` distinct wells and, in each, one expressed gene that
 * is expressed in at least `min_expressed_for_z` wells.
 *
 * Wells without such a gene are skipped, so fewer targets may be returned.
 */
inline std::vector<InjectedOutlier> choose_outlier_targets(const ExpressionMatrix& em, std::size_t n_wells, std::uint64_t seed) {
    std::vector<std::size_t> counts(em.n_genes(), 0);
    for (std::size_t i = 0; i < em.n_wells(); ++i) {
        for (std::size_t j = 0; j < em.n_genes(); ++j) {
            counts[j] += em.expressed(i, j);
        }
    }
    std::vector<std::size_t> order(em.n_wells());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto eng = make_stream(seed, { detail::stream_contamination });
    std::shuffle(order.begin(), order.end(), eng);

    std::vector<InjectedOutlier> out;
    for (auto i : order) {
        if (out.size() == n_wells) {
            break;
        }
        std::vector<std::size_t> candidates;
        for (std::size_t j = 0; j < em.n_genes(); ++j) {
            if (em.expressed(i, j) && counts[j] >= min_expressed_for_z) {
                candidates.push_back(j);
            }
        }
        if (candidates.empty()) {
            continue;
        }
        std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
        out.push_back(InjectedOutlier{ i, candidates[pick(eng)] });
    }
    return out;
}

enum class LevelKind {
    /** Reject when `p <= level`. */
    alpha,
    /** Benjamini-Hochberg over replicates; reject when `q <= level`. */
    fdr
};

struct PowerSpec {
    GeneParams group0;
    GeneParams group1;
    std::size_t wells0 = 90;
    std::size_t wells1 = 90;
    std::size_t replicates = 1000;
    double level = 0.05;
    LevelKind kind = LevelKind::alpha;
    std::uint64_t seed = 1;
    int c_max = default_c_max;
    TestOptions test;
    unsigned threads = 1;
};

struct PowerRow {
    TestMethod method;
    std::size_t rejections = 0;
    /** Replicates where the method's p-value was defined. */
    std::size_t defined = 0;
    std::size_t replicates = 0;
    double power = 0;
};

struct PowerTable {
    std::vector<PowerRow> rows;

    const PowerRow& row(TestMethod m) const {
        for (const auto& r : rows) {
            if (r.method == m) {
                return r;
            }
        }
        throw DomainError("method not present in power table");
    }
};

/**
 * @brief Rejection rates of all four tests over simulated two-group replicates.
 *
 * Replicates with an undefined p-value count as non-rejections.
 *
 * @throws DomainError with fewer than 100 replicates or a level outside (0, 1).
 */
inline PowerTable power_experiment(const PowerSpec& spec) {
    if (spec.replicates < 100) {
        throw DomainError("power experiments need at least 100 replicates");
    }
    if (!(spec.level > 0 && spec.level < 1)) {
        throw DomainError("significance level must lie in (0, 1)");
    }
    constexpr std::size_t nm = std::size(all_methods);
    std::vector<std::array<std::optional<double>, nm> > pvalues(spec.replicates);

    parallel_for(spec.replicates, spec.threads, [&](std::size_t r) {
        std::vector<Measurement> g0, g1;
        g0.reserve(spec.wells0);
        g1.reserve(spec.wells1);
        std::size_t truncated = 0;
        for (std::size_t k = 0; k < 2; ++k) {
            const auto& params = k == 0 ? spec.group0 : spec.group1;
            const auto n = k == 0 ? spec.wells0 : spec.wells1;
            auto& dest = k == 0 ? g0 : g1;
            for (std::size_t w = 0; w < n; ++w) {
                auto eng = make_stream(spec.seed, { r, detail::stream_single, k, w, 0 });
                Measurement m;
                if (detail::draw_expressed(eng, params.pi)) {
                    m.expressed = true;
                    m.et = detail::draw_et(eng, params, spec.c_max, truncated);
                }
                dest.push_back(m);
            }
        }
        const TwoGroupData data(g0, g1);
        for (std::size_t m = 0; m < nm; ++m) {
            pvalues[r][m] = run_test(all_methods[m], data, spec.test).p_value;
        }
    });

    PowerTable table;
    for (std::size_t m = 0; m < nm; ++m) {
        PowerRow row;
        row.method = all_methods[m];
        row.replicates = spec.replicates;
        std::vector<double> defined;
        for (const auto& rep : pvalues) {
            if (rep[m]) {
                defined.push_back(*rep[m]);
            }
        }
        row.defined = defined.size();
        if (spec.kind == LevelKind::fdr) {
            defined = fdr_adjust(defined);
        }
        for (auto p : defined) {
            row.rejections += p <= spec.level;
        }
        row.power = static_cast<double>(row.rejections) / static_cast<double>(row.replicates);
        table.rows.push_back(row);
    }
    return table;
}

}

#endif
