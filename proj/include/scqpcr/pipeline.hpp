#ifndef SCQPCR_PIPELINE_HPP
#define SCQPCR_PIPELINE_HPP

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "concordance.hpp"
#include "core.hpp"
#include "difftest.hpp"
#include "error.hpp"
#include "io.hpp"
#include "model.hpp"
#include "qc.hpp"
#include "sim.hpp"

/**
 * @file pipeline.hpp
 *
 * @brief End-to-end runs behind each command line subcommand.
 *
 * Each run takes in-memory inputs and returns its reports as
 * (file name, content) pairs; writing them out is left to the caller. All
 * reports are deterministic functions of the inputs and options.
 */

namespace scqpcr {

using Reports = std::vector<std::pair<std::string, std::string> >;

inline const std::string* find_report(const Reports& reports, const std::string& name) {
    for (const auto& [n, content] : reports) {
        if (n == name) {
            return &content;
        }
    }
    return nullptr;
}

inline ExpressionMatrix single_cell_wells(const ExpressionMatrix& em) {
    return subset(em, [](const WellMeta& w) { return w.n_cells == 1; });
}

inline ExpressionMatrix aggregate_wells(const ExpressionMatrix& em) {
    return subset(em, [](const WellMeta& w) { return w.n_cells > 1; });
}

/************** QC **************/

struct QcRunOptions {
    FilterConfig filter;
    /** Pairs of genes for the housekeeper R² diagnostic. */
    std::vector<std::pair<std::string, std::string> > housekeepers;
};

namespace detail {

inline void housekeeper_rows(TsvTable& table, const ExpressionMatrix& em, const std::string& stage, const QcRunOptions& opts) {
    for (const auto& [a, b] : opts.housekeepers) {
        for (const auto& unit : units(em)) {
            const auto sub = subset(em, [&](const WellMeta& w) { return w.unit_id == unit; });
            std::optional<double> r2;
            try {
                r2 = housekeeper_r2(sub, a, b);
            } catch (const InsufficientData&) {
            }
            table.row(stage, unit, a, b, r2);
        }
    }
}

}

/**
 * @brief Filter single-cell wells and report per-well scores.
 *
 * Produces `qc_wells.tsv`, `qc_summary.tsv`, `filtered.csv` (retained wells in
 * the canonical long layout) and, when housekeepers are given,
 * `housekeeper_r2.tsv`. Aggregate wells are passed through unfiltered.
 */
inline Reports run_qc(const ExpressionMatrix& em, const QcRunOptions& opts = QcRunOptions()) {
    const auto single = single_cell_wells(em);
    const auto result = filter_wells(single, opts.filter);
    const auto& rep = result.report;

    TsvTable wells({ "well_id", "unit_id", "group", "status", "criterion", "gene", "f", "zeta", "max_abs_z" });
    std::set<std::string> nulls(rep.removed_null.begin(), rep.removed_null.end());
    std::size_t si = 0, oi = 0;
    for (const auto& w : single.wells()) {
        if (nulls.count(w.well_id)) {
            wells.row(w.well_id, w.unit_id, w.group, "removed_null", "null", "NA", "NA", "NA", "NA");
            continue;
        }
        const auto& score = rep.scores[si++];
        std::string status = "kept", criterion = "NA", gene = "NA";
        if (oi < rep.removed_outlier.size() && rep.removed_outlier[oi].well_id == w.well_id) {
            const auto& removal = rep.removed_outlier[oi++];
            status = "removed_outlier";
            criterion = removal.by_z && removal.by_zeta ? "z+zeta" : (removal.by_z ? "z" : "zeta");
            if (removal.gene) {
                gene = *removal.gene;
            }
        }
        wells.row(w.well_id, w.unit_id, w.group, status, criterion, gene, score.f, score.zeta, score.max_abs_z);
    }

    TsvTable summary({ "input_wells", "removed_null", "removed_outlier", "kept", "t_z", "t_zeta", "k" });
    summary.row(single.n_wells(), rep.removed_null.size(), rep.removed_outlier.size(), rep.kept.size(), opts.filter.t_z, opts.filter.t_zeta, opts.filter.k);

    std::vector<std::size_t> retained;
    {
        std::set<std::string> kept(rep.kept.begin(), rep.kept.end());
        for (std::size_t i = 0; i < em.n_wells(); ++i) {
            const auto& w = em.well(i);
            if (w.n_cells > 1 || kept.count(w.well_id)) {
                retained.push_back(i);
            }
        }
    }
    const auto filtered = select_wells(em, retained);

    Reports out;
    out.emplace_back("qc_wells.tsv", wells.str());
    out.emplace_back("qc_summary.tsv", summary.str());
    out.emplace_back("filtered.csv", emit_string(to_plate(filtered)));
    if (!opts.housekeepers.empty()) {
        TsvTable hk({ "stage", "unit_id", "gene_a", "gene_b", "r2" });
        detail::housekeeper_rows(hk, single, "unfiltered", opts);
        detail::housekeeper_rows(hk, result.matrix, "filtered", opts);
        out.emplace_back("housekeeper_r2.tsv", hk.str());
    }
    return out;
}

/************** Testing **************/

struct TestRunOptions {
    std::vector<TestMethod> methods{ std::begin(all_methods), std::end(all_methods) };
    TestOptions test;
    /** FDR level used for the `discovery` column. */
    double fdr = 0.01;
    /** Levels reported in `discoveries.tsv`. */
    std::vector<double> fdr_levels{ 0.001, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2 };
    /** Reference label; defaults to the lexicographically first group label. */
    std::optional<std::string> group0;
    std::optional<std::string> group1;
    /** Apply the well filter before testing. */
    std::optional<FilterConfig> filter;
};

namespace detail {

inline std::pair<std::string, std::string> pick_groups(const ExpressionMatrix& em, const TestRunOptions& opts) {
    std::set<std::string> labels;
    for (const auto& w : em.wells()) {
        labels.insert(w.group);
    }
    if (opts.group0 && opts.group1) {
        return { *opts.group0, *opts.group1 };
    }
    std::vector<std::string> rest;
    for (const auto& l : labels) {
        if ((!opts.group0 || l != *opts.group0) && (!opts.group1 || l != *opts.group1)) {
            rest.push_back(l);
        }
    }
    if (opts.group0) {
        if (rest.size() != 1) {
            throw MalformedInput("cannot infer the second group: expected exactly one other group label");
        }
        return { *opts.group0, rest.front() };
    }
    if (opts.group1) {
        if (rest.size() != 1) {
            throw MalformedInput("cannot infer the reference group: expected exactly one other group label");
        }
        return { rest.front(), *opts.group1 };
    }
    if (labels.size() != 2) {
        throw MalformedInput("expected exactly two group labels, found " + std::to_string(labels.size()) + "; pass the groups explicitly");
    }
    return { *labels.begin(), *std::next(labels.begin()) };
}

}

/**
 * @brief Differential expression between two groups, for every gene × unit.
 *
 * Produces `test_results.tsv` (one row per gene × unit × method, with
 * Benjamini-Hochberg q-values computed per method) and `discoveries.tsv`
 * (discoveries per method at each FDR level).
 */
inline Reports run_test(const ExpressionMatrix& input, const TestRunOptions& opts = TestRunOptions()) {
    if (!(opts.fdr > 0 && opts.fdr < 1)) {
        throw DomainError("FDR level must lie in (0, 1)");
    }
    auto em = single_cell_wells(input);
    if (opts.filter) {
        em = filter_wells(em, *opts.filter).matrix;
    }
    const auto [label0, label1] = detail::pick_groups(em, opts);

    struct Row {
        std::string gene, unit;
        TestMethod method;
        std::size_t I0, n0, I1, n1;
        std::optional<TestResult> result;
        std::optional<double> q;
    };
    std::vector<Row> rows;

    const auto unit_ids = units(em);
    for (std::size_t j = 0; j < em.n_genes(); ++j) {
        for (const auto& unit : unit_ids) {
            std::vector<std::size_t> idx0, idx1;
            for (std::size_t i = 0; i < em.n_wells(); ++i) {
                const auto& w = em.well(i);
                if (w.unit_id != unit) {
                    continue;
                }
                if (w.group == label0) {
                    idx0.push_back(i);
                } else if (w.group == label1) {
                    idx1.push_back(i);
                }
            }
            if (idx0.empty() || idx1.empty()) {
                continue;
            }
            const auto c0 = gene_column(em, j, idx0);
            const auto c1 = gene_column(em, j, idx1);
            const TwoGroupData data(c0, c1);
            for (auto method : opts.methods) {
                Row row{ em.genes()[j], unit, method, data.group0.n_wells, data.group0.n_expressed(), data.group1.n_wells, data.group1.n_expressed(), std::nullopt, std::nullopt };
                try {
                    row.result = run_test(method, data, opts.test);
                } catch (const InsufficientData&) {
                }
                rows.push_back(std::move(row));
            }
        }
    }
    if (rows.empty()) {
        throw InsufficientData("no unit has wells in both groups '" + label0 + "' and '" + label1 + "'");
    }

    TsvTable curve({ "method", "fdr_level", "discoveries", "tests" });
    for (auto method : opts.methods) {
        std::vector<std::size_t> which;
        std::vector<double> p;
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].method == method && rows[r].result && rows[r].result->p_value) {
                which.push_back(r);
                p.push_back(*rows[r].result->p_value);
            }
        }
        const auto q = fdr_adjust(p);
        for (std::size_t x = 0; x < which.size(); ++x) {
            rows[which[x]].q = q[x];
        }
        for (auto level : opts.fdr_levels) {
            const auto hits = static_cast<std::size_t>(std::count_if(q.begin(), q.end(), [&](double v) { return v <= level; }));
            curve.row(method_name(method), level, hits, q.size());
        }
    }

    TsvTable results({ "gene", "unit_id", "method", "group0", "group1", "I0", "n0", "I1", "n1", "pi0", "pi1", "mu0", "mu1",
        "statistic", "lrt_bernoulli", "lrt_normal", "df", "p_value", "q_value", "p_star", "discovery", "degenerate" });
    for (const auto& row : rows) {
        if (!row.result) {
            results.row(row.gene, row.unit, method_name(row.method), label0, label1, row.I0, row.n0, row.I1, row.n1,
                "NA", "NA", "NA", "NA", "NA", "NA", "NA", "NA", "NA", "NA", "NA", "NA", "NA");
            continue;
        }
        const auto& t = *row.result;
        const bool discovery = row.q && *row.q <= opts.fdr;
        results.row(row.gene, row.unit, method_name(row.method), label0, label1, row.I0, row.n0, row.I1, row.n1,
            t.pi0, t.pi1, t.mu0, t.mu1, t.statistic(), t.lrt_bernoulli, t.lrt_normal, t.df, t.p_value, row.q, t.p_star, discovery, t.degenerate);
    }

    Reports out;
    out.emplace_back("test_results.tsv", results.str());
    out.emplace_back("discoveries.tsv", curve.str());
    return out;
}

/************** Concordance **************/

struct ConcordanceRunOptions {
    FilterConfig filter;
    DivisorMode divisor = DivisorMode::actual;
    int nominal_cells = 100;
    /** Zero handling used when optimizing thresholds. */
    ZeroMode zero_mode = ZeroMode::include;
    /** Also evaluate the filter over a threshold grid. */
    bool optimize = false;
    std::vector<ThresholdPair> grid = default_threshold_grid();
    unsigned threads = 1;
};

/** Split a matrix holding both single-cell and aggregate wells. */
inline ConcordanceDataset split_dataset(const ExpressionMatrix& em) {
    return ConcordanceDataset{ single_cell_wells(em), aggregate_wells(em) };
}

/**
 * @brief Concordance of in-silico and aggregate averages, per dataset.
 *
 * Produces `concordance_pairs.tsv` and `concordance_summary.tsv`, each with
 * the three modes `include` (undetected as zeros), `exclude` (undetected
 * dropped) and `filtered` (zeros included, after the well filter); plus
 * `threshold_grid.tsv` when optimizing.
 */
inline Reports run_concordance(const std::vector<ConcordanceDataset>& datasets, const ConcordanceRunOptions& opts = ConcordanceRunOptions()) {
    if (datasets.empty()) {
        throw InsufficientData("no datasets given");
    }
    TsvTable pairs({ "dataset", "mode", "gene", "unit_id", "n_pos", "n_wells", "y1", "y100", "log2_y1p1", "log2_y100p1" });
    TsvTable summary({ "dataset", "mode", "pairs", "r_c", "wss" });

    for (std::size_t d = 0; d < datasets.size(); ++d) {
        const auto& ds = datasets[d];
        const auto ids = matched_units(ds.single, ds.hundred);
        const auto name = std::to_string(d + 1);

        ConcordanceOptions base;
        base.divisor = opts.divisor;
        base.nominal_cells = opts.nominal_cells;
        auto include = base, exclude = base;
        include.zero_mode = ZeroMode::include;
        exclude.zero_mode = ZeroMode::exclude;
        const auto filtered = filter_wells(ds.single, opts.filter);

        const std::pair<const char*, ConcordanceReport> modes[] = {
            { "include", concordance_report(ds.single, ds.hundred, include, ids) },
            { "exclude", concordance_report(ds.single, ds.hundred, exclude, ids) },
            { "filtered", filtered_concordance_report(ds.single, filtered.matrix, ds.hundred, ids, include) },
        };
        for (const auto& [mode, report] : modes) {
            for (const auto& p : report.pairs) {
                std::optional<double> log_y1;
                if (p.y1) {
                    log_y1 = shifted_log(*p.y1);
                }
                pairs.row(name, mode, p.gene, p.unit, p.n_jk, p.n_wells, p.y1, p.y100, log_y1, shifted_log(p.y100));
            }
            summary.row(name, mode, report.pairs.size(), report.r_c, report.wss);
        }
    }

    Reports out;
    out.emplace_back("concordance_pairs.tsv", pairs.str());
    out.emplace_back("concordance_summary.tsv", summary.str());

    if (opts.optimize) {
        ConcordanceOptions copts;
        copts.divisor = opts.divisor;
        copts.nominal_cells = opts.nominal_cells;
        copts.zero_mode = opts.zero_mode;
        const auto grid = optimize_thresholds(datasets, opts.grid, opts.filter, copts, opts.threads);
        std::vector<std::string> header{ "t_z", "t_zeta", "mean_wss" };
        for (std::size_t d = 0; d < datasets.size(); ++d) {
            header.push_back("wss_" + std::to_string(d + 1));
            header.push_back("r_c_" + std::to_string(d + 1));
        }
        header.push_back("argmin");
        TsvTable table(header);
        for (std::size_t g = 0; g < grid.points.size(); ++g) {
            const auto& pt = grid.points[g];
            std::vector<std::string> cells{ format_number(pt.thresholds.t_z), format_number(pt.thresholds.t_zeta), format_number(pt.mean_wss) };
            for (std::size_t d = 0; d < datasets.size(); ++d) {
                cells.push_back(format_number(pt.wss[d]));
                cells.push_back(format_number(pt.r_c[d]));
            }
            cells.push_back(g == grid.argmin ? "true" : "false");
            table.row_cells(cells);
        }
        out.emplace_back("threshold_grid.tsv", table.str());
    }
    return out;
}

/************** Gene summaries **************/

/**
 * @brief Per gene × unit fits and histograms of expressed `et`.
 *
 * Produces `gene_summary.tsv` and `gene_histograms.tsv`.
 */
inline Reports run_summary(const ExpressionMatrix& input, std::size_t bins = 0) {
    const auto em = single_cell_wells(input);
    TsvTable fits({ "gene", "unit_id", "n_total", "n_expressed", "pi_hat", "mu_hat", "sigma2_hat" });
    TsvTable hist({ "gene", "unit_id", "bin", "lower", "upper", "count" });
    for (const auto& unit : units(em)) {
        const auto sub = subset(em, [&](const WellMeta& w) { return w.unit_id == unit; });
        for (std::size_t j = 0; j < sub.n_genes(); ++j) {
            const auto s = gene_summary(sub, j, bins);
            fits.row(s.gene, unit, s.fit.n_total, s.fit.n_expressed, s.fit.pi_hat, s.fit.mu_hat, s.fit.sigma2_hat);
            for (std::size_t b = 0; b < s.counts.size(); ++b) {
                hist.row(s.gene, unit, b, s.edges[b], s.edges[b + 1], s.counts[b]);
            }
        }
    }
    Reports out;
    out.emplace_back("gene_summary.tsv", fits.str());
    out.emplace_back("gene_histograms.tsv", hist.str());
    return out;
}

/************** Simulation **************/

/**
 * @brief Random design: `n_units` units, each with an "unstim" and a "stim"
 * group. A fraction `de_fraction` of genes shift in the stimulated group.
 */
inline SimSpec random_sim_spec(std::size_t n_genes, std::size_t n_units, std::size_t wells_per_group, std::uint64_t seed, double de_fraction = 0.2) {
    SimSpec spec;
    spec.seed = seed;
    spec.wells_per_group = wells_per_group;
    for (std::size_t j = 0; j < n_genes; ++j) {
        spec.genes.push_back("G" + std::to_string(j + 1));
    }
    for (std::size_t u = 0; u < n_units; ++u) {
        SimGroup unstim{ "u" + std::to_string(u + 1), "unstim", {} }, stim{ "u" + std::to_string(u + 1), "stim", {} };
        for (std::size_t j = 0; j < n_genes; ++j) {
            auto eng = make_stream(seed, { 99, u, j });
            std::uniform_real_distribution<double> upi(0.05, 0.95), umu(8, 16), usigma(0.5, 2), coin(0, 1);
            GeneParams base{ upi(eng), umu(eng), usigma(eng) };
            GeneParams shifted = base;
            if (coin(eng) < de_fraction) {
                const double up = coin(eng) < 0.5 ? -1 : 1;
                shifted.pi = std::clamp(base.pi + 0.25 * up, 0.0, 1.0);
                shifted.mu = base.mu + 1.0 * up;
            }
            unstim.genes.push_back(base);
            stim.genes.push_back(shifted);
        }
        spec.groups.push_back(std::move(unstim));
        spec.groups.push_back(std::move(stim));
    }
    return spec;
}

/**
 * @brief Parse a simulation spec from JSON.
 *
 * Keys: `genes` (list of names), `groups` (list of `{unit_id, group, genes:
 * [{pi, mu, sigma}...]}`), and optionally `wells_per_group`,
 * `aggregate_wells_per_group`, `aggregate_cells`, `seed`, `c_max`.
 */
inline SimSpec sim_spec_from_json(const nlohmann::json& j) {
    try {
        SimSpec spec;
        spec.genes = j.at("genes").get<std::vector<std::string> >();
        for (const auto& g : j.at("groups")) {
            SimGroup group;
            group.unit_id = g.at("unit_id").get<std::string>();
            group.group = g.at("group").get<std::string>();
            for (const auto& p : g.at("genes")) {
                group.genes.push_back(GeneParams{ p.at("pi").get<double>(), p.at("mu").get<double>(), p.at("sigma").get<double>() });
            }
            spec.groups.push_back(std::move(group));
        }
        spec.wells_per_group = j.value("wells_per_group", spec.wells_per_group);
        spec.aggregate_wells_per_group = j.value("aggregate_wells_per_group", spec.aggregate_wells_per_group);
        spec.aggregate_cells = j.value("aggregate_cells", spec.aggregate_cells);
        spec.seed = j.value("seed", spec.seed);
        spec.c_max = j.value("c_max", spec.c_max);
        spec.validate();
        return spec;
    } catch (const nlohmann::json::exception& e) {
        throw MalformedInput(std::string("invalid simulation spec: ") + e.what());
    }
}

struct SimulateRunOptions {
    bool aggregates = true;
    std::size_t replicate = 0;
};

namespace detail {

inline ExpressionMatrix stack(const ExpressionMatrix& a, const ExpressionMatrix& b) {
    std::vector<WellMeta> wells = a.wells();
    wells.insert(wells.end(), b.wells().begin(), b.wells().end());
    Grid<double> et(a.n_wells() + b.n_wells(), a.n_genes(), 0.0);
    Grid<char> det(a.n_wells() + b.n_wells(), a.n_genes(), 0);
    std::copy(a.et_grid().data.begin(), a.et_grid().data.end(), et.data.begin());
    std::copy(b.et_grid().data.begin(), b.et_grid().data.end(), et.data.begin() + a.et_grid().data.size());
    std::copy(a.detection_grid().data.begin(), a.detection_grid().data.end(), det.data.begin());
    std::copy(b.detection_grid().data.begin(), b.detection_grid().data.end(), det.data.begin() + a.detection_grid().data.size());
    return ExpressionMatrix(std::move(wells), a.genes(), std::move(et), std::move(det), a.c_max());
}

}

/**
 * @brief Simulated plate in the canonical long layout (`plate.csv`) plus
 * `simulation_meta.tsv` with truncation counts.
 */
inline Reports run_simulate(const SimSpec& spec, const SimulateRunOptions& opts = SimulateRunOptions()) {
    const auto single = simulate_plate(spec, opts.replicate);
    std::optional<SimulatedPlate> agg;
    if (opts.aggregates && spec.aggregate_wells_per_group > 0) {
        agg = simulate_aggregate(spec, opts.replicate);
    }
    const auto em = agg ? detail::stack(single.matrix, agg->matrix) : single.matrix;

    TsvTable meta({ "key", "value" });
    meta.row("seed", std::to_string(spec.seed));
    meta.row("replicate", opts.replicate);
    meta.row("genes", spec.genes.size());
    meta.row("groups", spec.groups.size());
    meta.row("single_cell_wells", single.matrix.n_wells());
    meta.row("aggregate_wells", agg ? agg->matrix.n_wells() : std::size_t{0});
    meta.row("aggregate_cells", spec.aggregate_cells);
    meta.row("truncated_single", single.truncated);
    meta.row("truncated_aggregate", agg ? agg->truncated : std::size_t{0});

    Reports out;
    out.emplace_back("plate.csv", emit_string(to_plate(em)));
    out.emplace_back("simulation_meta.tsv", meta.str());
    return out;
}

/**
 * @brief Rejection rates per test method (`power.tsv`).
 */
inline Reports run_power(const PowerSpec& spec) {
    const auto table = power_experiment(spec);
    TsvTable out({ "method", "level_kind", "level", "replicates", "defined", "rejections", "power",
        "pi0", "mu0", "sigma0", "pi1", "mu1", "sigma1", "wells0", "wells1" });
    for (const auto& row : table.rows) {
        out.row(method_name(row.method), spec.kind == LevelKind::alpha ? "alpha" : "fdr", spec.level, row.replicates, row.defined, row.rejections, row.power,
            spec.group0.pi, spec.group0.mu, spec.group0.sigma, spec.group1.pi, spec.group1.mu, spec.group1.sigma, spec.wells0, spec.wells1);
    }
    return Reports{ { "power.tsv", out.str() } };
}

}

#endif
