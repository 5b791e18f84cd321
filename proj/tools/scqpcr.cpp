// Command line front end: ingest plates, run a pipeline stage, write TSV reports.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "scqpcr/pipeline.hpp"

namespace {

namespace fs = std::filesystem;
using namespace scqpcr;

enum ExitCode : int {
    exit_ok = 0,
    exit_usage = 2,
    exit_io = 3,
    exit_malformed = 4,
    exit_insufficient = 5,
    exit_domain = 6,
    exit_internal = 70
};

struct Common {
    int c_max = default_c_max;
    std::string format = "long";
    fs::path out = ".";
};

struct FilterFlags {
    double t_z = 9;
    double t_zeta = 9;
    double k = default_mad_scale;
    std::string scope = "unit";

    FilterConfig config() const {
        FilterConfig cfg;
        cfg.t_z = t_z;
        cfg.t_zeta = t_zeta;
        cfg.k = k;
        cfg.scope = scope == "plate" ? QcScope::whole_matrix : QcScope::per_unit;
        return cfg;
    }
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--cmax", c.c_max, "Maximum PCR cycles")->check(CLI::PositiveNumber);
    cmd->add_option("--format", c.format, "Input plate layout")->check(CLI::IsMember({ "long", "wide" }));
    cmd->add_option("--out", c.out, "Output directory");
}

void add_filter(CLI::App* cmd, FilterFlags& f) {
    cmd->add_option("--tz", f.t_z, "Threshold on |z| (inf disables)");
    cmd->add_option("--tzeta", f.t_zeta, "Threshold on |zeta| (inf disables)");
    cmd->add_option("--k", f.k, "MAD scaling constant");
    cmd->add_option("--scope", f.scope, "Scope of medians and MADs")->check(CLI::IsMember({ "unit", "plate" }));
}

ExpressionMatrix load(const fs::path& path, const Common& c) {
    return et_transform(ingest_file(path, c.format == "wide" ? PlateFormat::wide_format : PlateFormat::long_format, c.c_max));
}

void write_reports(const fs::path& dir, const Reports& reports) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
    }
    for (const auto& [name, content] : reports) {
        write_atomic(dir / name, content);
    }
}

SigmaMode sigma_mode(const std::string& s) {
    return s == "pergroup" ? SigmaMode::per_group : SigmaMode::shared;
}

std::vector<double> parse_list(const std::string& text) {
    std::vector<double> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto comma = text.find(',', start);
        const auto token = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        if (token == "inf" || token == "Inf") {
            out.push_back(std::numeric_limits<double>::infinity());
        } else {
            std::size_t used = 0;
            double v = 0;
            try {
                v = std::stod(token, &used);
            } catch (const std::exception&) {
                used = std::string::npos;
            }
            if (used != token.size()) {
                throw DomainError("cannot parse number '" + token + "'");
            }
            out.push_back(v);
        }
        if (comma == std::string::npos) {
            break;
        }
        start = comma + 1;
    }
    return out;
}

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::io: return exit_io;
        case ErrorKind::malformed_input: return exit_malformed;
        case ErrorKind::insufficient_data: return exit_insufficient;
        case ErrorKind::domain: return exit_domain;
    }
    return exit_internal;
}

}

int main(int argc, char** argv) {
    CLI::App app{ "Single-cell qPCR analysis: quality control, differential expression, concordance and simulation" };
    app.require_subcommand(1);

    // qc
    Common qc_common;
    FilterFlags qc_filter;
    fs::path qc_input;
    std::vector<std::string> qc_housekeepers;
    auto* qc = app.add_subcommand("qc", "Filter null and outlying single-cell wells");
    add_common(qc, qc_common);
    add_filter(qc, qc_filter);
    qc->add_option("--input", qc_input, "Plate CSV")->required();
    qc->add_option("--housekeepers", qc_housekeepers, "Gene pairs GENE_A:GENE_B for the R^2 diagnostic");

    // test
    Common test_common;
    FilterFlags test_filter;
    fs::path test_input;
    std::string group0, group1, test_sigma = "shared", test_levels;
    std::vector<std::string> test_methods;
    double test_fdr = 0.01;
    bool test_welch = false, test_apply_filter = false;
    auto* test = app.add_subcommand("test", "Test each gene x unit for differential expression between two groups");
    add_common(test, test_common);
    add_filter(test, test_filter);
    test->add_option("--input", test_input, "Plate CSV")->required();
    test->add_option("--group0", group0, "Reference group label");
    test->add_option("--group1", group1, "Comparison group label");
    test->add_option("--methods", test_methods, "Subset of combined,bernoulli,normal,t_raw")->delimiter(',')->check(CLI::IsMember({ "combined", "bernoulli", "normal", "t_raw" }));
    test->add_option("--fdr", test_fdr, "FDR level for the discovery column")->check(CLI::Range(0.0, 1.0));
    test->add_option("--fdr-levels", test_levels, "Comma-separated FDR levels for the discoveries curve");
    test->add_option("--sigma-mode", test_sigma, "Variance model of the continuous component")->check(CLI::IsMember({ "shared", "pergroup" }));
    test->add_flag("--welch", test_welch, "Welch t-test instead of the pooled form");
    test->add_flag("--filter", test_apply_filter, "Apply the well filter before testing");

    // concordance
    Common conc_common;
    FilterFlags conc_filter;
    std::vector<fs::path> conc_inputs, conc_aggregates;
    std::string conc_divisor = "actual", conc_grid, conc_zero = "include";
    int conc_nominal = 100;
    bool conc_optimize = false;
    unsigned conc_threads = 1;
    auto* conc = app.add_subcommand("concordance", "Compare in-silico single-cell averages with aggregate wells");
    add_common(conc, conc_common);
    add_filter(conc, conc_filter);
    conc->add_option("--input", conc_inputs, "Plate CSV per dataset (single-cell and, unless --aggregate, aggregate wells)")->required();
    conc->add_option("--aggregate", conc_aggregates, "Aggregate plate CSV per dataset");
    conc->add_option("--divisor", conc_divisor, "Divisor of the in-silico average")->check(CLI::IsMember({ "actual", "nominal" }));
    conc->add_option("--nominal-cells", conc_nominal, "Nominal divisor")->check(CLI::PositiveNumber);
    conc->add_option("--zero-mode", conc_zero, "Zero handling for threshold optimization")->check(CLI::IsMember({ "include", "exclude" }));
    conc->add_flag("--optimize", conc_optimize, "Evaluate the filter over a threshold grid");
    conc->add_option("--grid", conc_grid, "Comma-separated threshold values; the grid is their square");
    conc->add_option("--threads", conc_threads, "Worker threads")->check(CLI::PositiveNumber);

    // summary
    Common sum_common;
    fs::path sum_input;
    std::size_t sum_bins = 0;
    auto* summary = app.add_subcommand("summary", "Per gene x unit model fits and histograms");
    add_common(summary, sum_common);
    summary->add_option("--input", sum_input, "Plate CSV")->required();
    summary->add_option("--bins", sum_bins, "Histogram bins (0 = Sturges)");

    // simulate
    Common sim_common;
    fs::path sim_spec_path;
    std::size_t sim_genes = 96, sim_units = 2, sim_wells = 90, sim_agg_wells = 1, sim_replicate = 0;
    int sim_agg_cells = 100;
    double sim_de = 0.2;
    std::uint64_t sim_seed = 1;
    bool sim_no_agg = false;
    auto* sim = app.add_subcommand("simulate", "Write a simulated plate");
    add_common(sim, sim_common);
    sim->add_option("--spec", sim_spec_path, "JSON simulation spec (overrides the random design flags)");
    sim->add_option("--genes", sim_genes, "Genes in the random design");
    sim->add_option("--units", sim_units, "Units in the random design");
    sim->add_option("--wells", sim_wells, "Single-cell wells per unit x group");
    sim->add_option("--de-fraction", sim_de, "Fraction of genes shifted in the stimulated group")->check(CLI::Range(0.0, 1.0));
    sim->add_option("--aggregate-wells", sim_agg_wells, "Aggregate wells per unit x group");
    sim->add_option("--aggregate-cells", sim_agg_cells, "Cells per aggregate well")->check(CLI::PositiveNumber);
    sim->add_option("--seed", sim_seed, "Random seed");
    sim->add_option("--replicate", sim_replicate, "Replicate index");
    sim->add_flag("--no-aggregates", sim_no_agg, "Omit aggregate wells");

    // power
    Common pow_common;
    PowerSpec pow;
    std::string pow_sigma = "shared";
    double pow_fdr = 0;
    bool pow_welch = false;
    auto* power = app.add_subcommand("power", "Rejection rates of the four tests on simulated two-group data");
    add_common(power, pow_common);
    power->add_option("--pi0", pow.group0.pi, "Expression frequency, group 0");
    power->add_option("--mu0", pow.group0.mu, "Mean et, group 0");
    power->add_option("--sigma0", pow.group0.sigma, "SD of et, group 0");
    power->add_option("--pi1", pow.group1.pi, "Expression frequency, group 1");
    power->add_option("--mu1", pow.group1.mu, "Mean et, group 1");
    power->add_option("--sigma1", pow.group1.sigma, "SD of et, group 1");
    power->add_option("--wells0", pow.wells0, "Wells in group 0");
    power->add_option("--wells1", pow.wells1, "Wells in group 1");
    power->add_option("--replicates", pow.replicates, "Replicates (at least 100)");
    auto* alpha_opt = power->add_option("--alpha", pow.level, "Per-replicate significance level")->check(CLI::Range(0.0, 1.0));
    power->add_option("--fdr", pow_fdr, "Benjamini-Hochberg level across replicates")->check(CLI::Range(0.0, 1.0))->excludes(alpha_opt);
    power->add_option("--seed", pow.seed, "Random seed");
    power->add_option("--threads", pow.threads, "Worker threads")->check(CLI::PositiveNumber);
    power->add_option("--sigma-mode", pow_sigma, "Variance model of the continuous component")->check(CLI::IsMember({ "shared", "pergroup" }));
    power->add_flag("--welch", pow_welch, "Welch t-test instead of the pooled form");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_usage;
    }

    try {
        if (qc->parsed()) {
            QcRunOptions opts;
            opts.filter = qc_filter.config();
            for (const auto& pair : qc_housekeepers) {
                const auto colon = pair.find(':');
                if (colon == std::string::npos) {
                    throw DomainError("housekeeper pair '" + pair + "' must be GENE_A:GENE_B");
                }
                opts.housekeepers.emplace_back(pair.substr(0, colon), pair.substr(colon + 1));
            }
            write_reports(qc_common.out, run_qc(load(qc_input, qc_common), opts));
        } else if (test->parsed()) {
            TestRunOptions opts;
            if (!test_methods.empty()) {
                opts.methods.clear();
                for (const auto& m : test_methods) {
                    for (auto candidate : all_methods) {
                        if (method_name(candidate) == m) {
                            opts.methods.push_back(candidate);
                        }
                    }
                }
            }
            opts.fdr = test_fdr;
            if (!test_levels.empty()) {
                opts.fdr_levels = parse_list(test_levels);
            }
            opts.test.sigma = sigma_mode(test_sigma);
            opts.test.welch = test_welch;
            if (!group0.empty()) {
                opts.group0 = group0;
            }
            if (!group1.empty()) {
                opts.group1 = group1;
            }
            if (test_apply_filter) {
                opts.filter = test_filter.config();
            }
            write_reports(test_common.out, run_test(load(test_input, test_common), opts));
        } else if (conc->parsed()) {
            if (!conc_aggregates.empty() && conc_aggregates.size() != conc_inputs.size()) {
                throw DomainError("--aggregate must be given once per --input");
            }
            std::vector<ConcordanceDataset> datasets;
            for (std::size_t d = 0; d < conc_inputs.size(); ++d) {
                const auto em = load(conc_inputs[d], conc_common);
                if (conc_aggregates.empty()) {
                    datasets.push_back(split_dataset(em));
                } else {
                    datasets.push_back(ConcordanceDataset{ single_cell_wells(em), aggregate_wells(load(conc_aggregates[d], conc_common)) });
                }
            }
            ConcordanceRunOptions opts;
            opts.filter = conc_filter.config();
            opts.divisor = conc_divisor == "nominal" ? DivisorMode::nominal : DivisorMode::actual;
            opts.nominal_cells = conc_nominal;
            opts.zero_mode = conc_zero == "exclude" ? ZeroMode::exclude : ZeroMode::include;
            opts.optimize = conc_optimize;
            opts.threads = conc_threads;
            if (!conc_grid.empty()) {
                const auto values = parse_list(conc_grid);
                opts.grid.clear();
                for (auto tz : values) {
                    for (auto tzeta : values) {
                        opts.grid.push_back(ThresholdPair{ tz, tzeta });
                    }
                }
            }
            write_reports(conc_common.out, run_concordance(datasets, opts));
        } else if (summary->parsed()) {
            write_reports(sum_common.out, run_summary(load(sum_input, sum_common), sum_bins));
        } else if (sim->parsed()) {
            SimSpec spec;
            if (!sim_spec_path.empty()) {
                std::ifstream in(sim_spec_path);
                if (!in) {
                    throw IoError("cannot open '" + sim_spec_path.string() + "'");
                }
                nlohmann::json j;
                try {
                    in >> j;
                } catch (const nlohmann::json::exception& e) {
                    throw MalformedInput(std::string("cannot parse simulation spec: ") + e.what());
                }
                spec = sim_spec_from_json(j);
            } else {
                spec = random_sim_spec(sim_genes, sim_units, sim_wells, sim_seed, sim_de);
                spec.aggregate_wells_per_group = sim_agg_wells;
                spec.aggregate_cells = sim_agg_cells;
                spec.c_max = sim_common.c_max;
            }
            SimulateRunOptions opts;
            opts.aggregates = !sim_no_agg;
            opts.replicate = sim_replicate;
            write_reports(sim_common.out, run_simulate(spec, opts));
        } else if (power->parsed()) {
            if (pow_fdr > 0) {
                pow.kind = LevelKind::fdr;
                pow.level = pow_fdr;
            }
            pow.c_max = pow_common.c_max;
            pow.test.sigma = sigma_mode(pow_sigma);
            pow.test.welch = pow_welch;
            write_reports(pow_common.out, run_power(pow));
        }
    } catch (const Error& e) {
        std::cerr << "scqpcr: " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "scqpcr: internal error: " << e.what() << '\n';
        return exit_internal;
    }
    return exit_ok;
}
