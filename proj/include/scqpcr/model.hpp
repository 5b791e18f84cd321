#ifndef SCQPCR_MODEL_HPP
#define SCQPCR_MODEL_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "error.hpp"

/**
 * @file model.hpp
 *
 * @brief Zero-inflated log-normal model for a single gene.
 *
 * Each well expresses the gene with probability `pi`; given expression, `et`
 * is normal with mean `mu` and variance `sigma2` (equivalently, the linear
 * abundance is log-normal). Everything is evaluated on the `et` scale.
 */

namespace scqpcr {

/** Lower bound on the variance used inside likelihood evaluations only. */
inline constexpr double variance_floor = 1e-6;

struct ModelParams {
    double pi = 0;
    double mu = 0;
    double sigma2 = 1;
};

struct GeneFit {
    double pi_hat = 0;
    /** Defined when at least one well is expressed. */
    std::optional<double> mu_hat;
    /** Divide-by-n variance; defined when at least two wells are expressed. */
    std::optional<double> sigma2_hat;
    std::size_t n_expressed = 0;
    std::size_t n_total = 0;
};

/** Mean and sum of squared deviations of a sample; `ss` is 0 for empty input. */
struct Moments {
    std::size_t n = 0;
    double mean = 0;
    double ss = 0;
};

inline Moments moments(std::span<const double> values) {
    Moments out;
    out.n = values.size();
    if (out.n == 0) {
        return out;
    }
    double sum = 0;
    for (auto v : values) {
        sum += v;
    }
    out.mean = sum / static_cast<double>(out.n);
    for (auto v : values) {
        const double d = v - out.mean;
        out.ss += d * d;
    }
    return out;
}

inline std::vector<double> expressed_values(std::span<const Measurement> data) {
    std::vector<double> out;
    for (const auto& m : data) {
        if (m.expressed) {
            out.push_back(m.et);
        }
    }
    return out;
}

/**
 * @brief Maximum likelihood fit for one gene.
 *
 * @throws InsufficientData for empty input.
 */
inline GeneFit fit_gene(std::span<const Measurement> data) {
    if (data.empty()) {
        throw InsufficientData("cannot fit a gene with no wells");
    }
    const auto values = expressed_values(data);
    const auto mom = moments(values);

    GeneFit fit;
    fit.n_total = data.size();
    fit.n_expressed = values.size();
    fit.pi_hat = static_cast<double>(fit.n_expressed) / static_cast<double>(fit.n_total);
    if (fit.n_expressed >= 1) {
        fit.mu_hat = mom.mean;
    }
    if (fit.n_expressed >= 2) {
        fit.sigma2_hat = mom.ss / static_cast<double>(mom.n);
    }
    return fit;
}

/**
 * @brief `n log(pi) + (total - n) log(1 - pi)`, with `0 log 0 = 0`.
 */
inline double bernoulli_log_likelihood(double pi, std::size_t n_expressed, std::size_t n_total) {
    if (!(pi >= 0 && pi <= 1)) {
        throw DomainError("expression frequency must lie in [0, 1]");
    }
    const double n = static_cast<double>(n_expressed);
    const double m = static_cast<double>(n_total - n_expressed);
    double out = 0;
    if (n > 0) {
        out += n * std::log(pi);
    }
    if (m > 0) {
        out += m * std::log1p(-pi);
    }
    return out;
}

/**
 * @brief Sum of normal log-densities of `values`.
 *
 * @throws DomainError if `sigma2 <= 0` and `values` is non-empty.
 */
inline double normal_log_likelihood(double mu, double sigma2, std::span<const double> values) {
    if (values.empty()) {
        return 0;
    }
    if (!(sigma2 > 0)) {
        throw DomainError("variance must be positive when expressed wells are present");
    }
    double ss = 0;
    for (auto v : values) {
        const double d = v - mu;
        ss += d * d;
    }
    const double n = static_cast<double>(values.size());
    return -0.5 * n * std::log(2 * std::numbers::pi * sigma2) - ss / (2 * sigma2);
}

/**
 * @brief Log-likelihood of one gene's observations: the Bernoulli detection
 * term plus the normal density of every expressed `et`.
 */
inline double log_likelihood(const ModelParams& params, std::span<const Measurement> data) {
    const auto values = expressed_values(data);
    return bernoulli_log_likelihood(params.pi, values.size(), data.size()) + normal_log_likelihood(params.mu, params.sigma2, values);
}

struct GeneSummary {
    std::string gene;
    GeneFit fit;
    /** `counts.size() + 1` edges spanning [min et, max et]; empty when nothing is expressed. */
    std::vector<double> edges;
    std::vector<std::size_t> counts;
};

/**
 * @brief Histogram of expressed `et` values with the fitted model parameters.
 *
 * `bins == 0` picks Sturges' rule.
 */
inline GeneSummary gene_summary(const ExpressionMatrix& em, std::size_t gene, std::size_t bins = 0) {
    GeneSummary out;
    out.gene = em.genes().at(gene);
    const auto column = gene_column(em, gene);
    if (column.empty()) {
        return out;
    }
    out.fit = fit_gene(column);
    const auto values = expressed_values(column);
    if (values.empty()) {
        return out;
    }

    if (bins == 0) {
        bins = static_cast<std::size_t>(std::ceil(std::log2(static_cast<double>(values.size())))) + 1;
    }
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *lo_it, hi = *hi_it;
    if (hi == lo) {
        bins = 1;
    }
    const double width = (hi - lo) / static_cast<double>(bins);
    out.edges.resize(bins + 1);
    for (std::size_t b = 0; b <= bins; ++b) {
        out.edges[b] = lo + width * static_cast<double>(b);
    }
    out.edges.back() = hi;

    out.counts.assign(bins, 0);
    for (auto v : values) {
        std::size_t b = width > 0 ? static_cast<std::size_t>((v - lo) / width) : 0;
        ++out.counts[std::min(b, bins - 1)];
    }
    return out;
}

}

#endif
