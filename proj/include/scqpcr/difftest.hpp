#ifndef SCQPCR_DIFFTEST_HPP
#define SCQPCR_DIFFTEST_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "core.hpp"
#include "error.hpp"
#include "model.hpp"

/**
 * @file difftest.hpp
 *
 * @brief Two-group tests of differential expression for one gene.
 *
 * The combined test compares the null hypothesis `pi0 = pi1, mu0 = mu1`
 * against the alternative with free per-group frequencies and means. Its
 * likelihood factorizes into a Bernoulli part over all wells and a normal part
 * over the expressed wells, so `-2 log(Lambda)` is the sum of a Bernoulli LRT
 * and a normal LRT. The components, and a t-test on linear abundances with
 * zeros included, are available as comparators.
 */

namespace scqpcr {

enum class TestMethod {
    combined,
    bernoulli,
    normal,
    t_raw
};

inline constexpr std::string_view method_name(TestMethod m) {
    switch (m) {
        case TestMethod::combined: return "combined";
        case TestMethod::bernoulli: return "bernoulli";
        case TestMethod::normal: return "normal";
        case TestMethod::t_raw: return "t_raw";
    }
    return "unknown";
}

inline constexpr TestMethod all_methods[] = { TestMethod::combined, TestMethod::bernoulli, TestMethod::normal, TestMethod::t_raw };

enum class SigmaMode {
    /** One variance for both groups, under both hypotheses. */
    shared,
    /** Separate variances under the alternative; adds one degree of freedom. */
    per_group
};

struct TestOptions {
    SigmaMode sigma = SigmaMode::shared;
    /** Welch's unequal-variance t-test instead of the pooled form. */
    bool welch = false;
};

/** Per-group summary for one gene. */
struct GroupData {
    std::size_t n_wells = 0;
    std::vector<double> expressed;
    /** Linear abundances `2^et`, zero where undetected. */
    std::vector<double> linear;

    std::size_t n_expressed() const noexcept { return expressed.size(); }
};

inline GroupData make_group(std::span<const Measurement> data) {
    GroupData out;
    out.n_wells = data.size();
    out.linear.reserve(data.size());
    for (const auto& m : data) {
        if (m.expressed) {
            out.expressed.push_back(m.et);
            out.linear.push_back(std::exp2(m.et));
        } else {
            out.linear.push_back(0);
        }
    }
    return out;
}

struct TwoGroupData {
    GroupData group0;
    GroupData group1;

    TwoGroupData() = default;
    TwoGroupData(std::span<const Measurement> g0, std::span<const Measurement> g1) : group0(make_group(g0)), group1(make_group(g1)) {}
};

struct TestResult {
    TestMethod method = TestMethod::combined;
    std::optional<double> lrt_combined;
    std::optional<double> lrt_bernoulli;
    std::optional<double> lrt_normal;
    std::optional<double> t_statistic;
    double df = 0;
    /** Undefined when the method's statistic is undefined. */
    std::optional<double> p_value;
    std::optional<double> p_star;
    /** Set when the statistic collapses, e.g. zero pooled variance for the t-test. */
    bool degenerate = false;

    double pi0 = 0, pi1 = 0;
    std::optional<double> mu0, mu1;

    std::optional<double> statistic() const {
        switch (method) {
            case TestMethod::combined: return lrt_combined;
            case TestMethod::bernoulli: return lrt_bernoulli;
            case TestMethod::normal: return lrt_normal;
            case TestMethod::t_raw: return t_statistic;
        }
        return std::nullopt;
    }
};

/**
 * @brief `sign(mu1 - mu0) * -log10(p)`, positive when group 1 expresses more.
 *
 * Falls back to the sign of `pi1 - pi0` when either mean is undefined or the
 * means are tied.
 */
inline double signed_log_p(double p, std::optional<double> mu0, std::optional<double> mu1, double pi0 = 0, double pi1 = 0) {
    if (!(p > 0 && p <= 1)) {
        throw DomainError("p-value must lie in (0, 1]");
    }
    double direction = 0;
    if (mu0 && mu1 && *mu1 != *mu0) {
        direction = *mu1 > *mu0 ? 1 : -1;
    } else if (pi1 != pi0) {
        direction = pi1 > pi0 ? 1 : -1;
    }
    const double out = -direction * std::log10(p);
    return out == 0 ? 0.0 : out;
}

namespace detail {

inline double clamp_p(double p) {
    return std::clamp(p, std::numeric_limits<double>::min(), 1.0);
}

inline double chisq_upper(double stat, double df) {
    if (stat <= 0) {
        return 1;
    }
    boost::math::chi_squared dist(df);
    return clamp_p(boost::math::cdf(boost::math::complement(dist, stat)));
}

inline void check_groups(const TwoGroupData& data) {
    if (data.group0.n_wells == 0 || data.group1.n_wells == 0) {
        throw InsufficientData("both groups need at least one well");
    }
}

inline double rate(const GroupData& g) {
    return static_cast<double>(g.n_expressed()) / static_cast<double>(g.n_wells);
}

inline bool normal_defined(const TwoGroupData& data) {
    return data.group0.n_expressed() >= 2 && data.group1.n_expressed() >= 2;
}

inline void fill_summary(const TwoGroupData& data, TestResult& res) {
    res.pi0 = rate(data.group0);
    res.pi1 = rate(data.group1);
    if (data.group0.n_expressed()) {
        res.mu0 = moments(data.group0.expressed).mean;
    }
    if (data.group1.n_expressed()) {
        res.mu1 = moments(data.group1.expressed).mean;
    }
}

inline void finish(TestResult& res) {
    if (res.p_value) {
        res.p_star = signed_log_p(*res.p_value, res.mu0, res.mu1, res.pi0, res.pi1);
    }
}

inline double nonneg(double x) {
    return x > 0 ? x : 0.0;
}

inline double bernoulli_statistic(const TwoGroupData& data) {
    const auto& g0 = data.group0;
    const auto& g1 = data.group1;
    const double pooled = static_cast<double>(g0.n_expressed() + g1.n_expressed()) / static_cast<double>(g0.n_wells + g1.n_wells);
    const double alt = bernoulli_log_likelihood(rate(g0), g0.n_expressed(), g0.n_wells) + bernoulli_log_likelihood(rate(g1), g1.n_expressed(), g1.n_wells);
    const double null = bernoulli_log_likelihood(pooled, g0.n_expressed(), g0.n_wells) + bernoulli_log_likelihood(pooled, g1.n_expressed(), g1.n_wells);
    return nonneg(2 * (alt - null));
}

struct NormalFit {
    double mu0, mu1, sigma2_0, sigma2_1;
    double null_mu, null_sigma2;
};

// Assumes both groups have at least two expressed wells.
inline NormalFit normal_mle(const TwoGroupData& data, SigmaMode mode) {
    const auto m0 = moments(data.group0.expressed);
    const auto m1 = moments(data.group1.expressed);
    std::vector<double> pooled(data.group0.expressed);
    pooled.insert(pooled.end(), data.group1.expressed.begin(), data.group1.expressed.end());
    const auto mp = moments(pooled);
    const double n = static_cast<double>(mp.n);

    NormalFit fit;
    fit.mu0 = m0.mean;
    fit.mu1 = m1.mean;
    if (mode == SigmaMode::shared) {
        fit.sigma2_0 = fit.sigma2_1 = std::max((m0.ss + m1.ss) / n, variance_floor);
    } else {
        fit.sigma2_0 = std::max(m0.ss / static_cast<double>(m0.n), variance_floor);
        fit.sigma2_1 = std::max(m1.ss / static_cast<double>(m1.n), variance_floor);
    }
    fit.null_mu = mp.mean;
    fit.null_sigma2 = std::max(mp.ss / n, variance_floor);
    return fit;
}

inline double normal_statistic(const TwoGroupData& data, SigmaMode mode) {
    const auto fit = normal_mle(data, mode);
    const auto& x0 = data.group0.expressed;
    const auto& x1 = data.group1.expressed;
    const double alt = normal_log_likelihood(fit.mu0, fit.sigma2_0, x0) + normal_log_likelihood(fit.mu1, fit.sigma2_1, x1);
    const double null = normal_log_likelihood(fit.null_mu, fit.null_sigma2, x0) + normal_log_likelihood(fit.null_mu, fit.null_sigma2, x1);
    return nonneg(2 * (alt - null));
}

inline std::vector<Measurement> as_measurements(const GroupData& g) {
    std::vector<Measurement> out;
    out.reserve(g.n_wells);
    for (auto v : g.expressed) {
        out.push_back(Measurement{ v, true });
    }
    out.resize(g.n_wells, Measurement{ 0, false });
    return out;
}

struct TStatistic {
    double t = 0;
    double df = 0;
    double p = 1;
    bool degenerate = false;
};

/**
 * Two-sample t-test of `y - x`. Pooled-variance form unless `welch`.
 */
inline TStatistic two_sample_t(std::span<const double> x, std::span<const double> y, bool welch) {
    const auto mx = moments(x);
    const auto my = moments(y);
    const double nx = static_cast<double>(mx.n), ny = static_cast<double>(my.n);
    TStatistic out;

    double se2 = 0;
    if (welch) {
        const double vx = mx.ss / (nx - 1), vy = my.ss / (ny - 1);
        const double ax = vx / nx, ay = vy / ny;
        se2 = ax + ay;
        out.df = se2 > 0 ? se2 * se2 / (ax * ax / (nx - 1) + ay * ay / (ny - 1)) : nx + ny - 2;
    } else {
        out.df = nx + ny - 2;
        const double sp2 = (mx.ss + my.ss) / out.df;
        se2 = sp2 * (1 / nx + 1 / ny);
    }

    if (!(se2 > 0)) {
        out.degenerate = true;
        return out;
    }
    out.t = (my.mean - mx.mean) / std::sqrt(se2);
    boost::math::students_t dist(out.df);
    out.p = clamp_p(2 * boost::math::cdf(boost::math::complement(dist, std::abs(out.t))));
    return out;
}

}

/**
 * @brief Bernoulli LRT for a difference in expression frequency; 1 degree of freedom.
 *
 * @throws InsufficientData if a group has no wells.
 */
inline TestResult bernoulli_lrt(const TwoGroupData& data) {
    detail::check_groups(data);
    TestResult res;
    res.method = TestMethod::bernoulli;
    detail::fill_summary(data, res);
    res.lrt_bernoulli = detail::bernoulli_statistic(data);
    res.df = 1;
    res.p_value = detail::chisq_upper(*res.lrt_bernoulli, res.df);
    detail::finish(res);
    return res;
}

/**
 * @brief Normal LRT for a difference in mean `et` among expressed wells.
 *
 * One degree of freedom with a shared variance, two with per-group variances.
 * Requires at least two expressed wells per group; otherwise the statistic
 * and p-value are left undefined.
 *
 * @throws InsufficientData if a group has no wells.
 */
inline TestResult normal_lrt(const TwoGroupData& data, const TestOptions& opts = TestOptions()) {
    detail::check_groups(data);
    TestResult res;
    res.method = TestMethod::normal;
    detail::fill_summary(data, res);
    res.df = opts.sigma == SigmaMode::shared ? 1 : 2;
    if (detail::normal_defined(data)) {
        res.lrt_normal = detail::normal_statistic(data, opts.sigma);
        res.p_value = detail::chisq_upper(*res.lrt_normal, res.df);
    }
    detail::finish(res);
    return res;
}

/**
 * @brief Combined discrete/continuous LRT.
 *
 * `-2 log(Lambda)` is computed from the full two-group likelihood evaluated
 * at the null and alternative maximum likelihood estimates. With a shared
 * variance there are 2 degrees of freedom (3 with per-group variances). When
 * either group has fewer than two expressed wells the continuous part is
 * dropped and the test reduces to the Bernoulli LRT with 1 degree of freedom.
 *
 * @throws InsufficientData if a group has no wells.
 */
inline TestResult combined_lrt(const TwoGroupData& data, const TestOptions& opts = TestOptions()) {
    detail::check_groups(data);
    TestResult res;
    res.method = TestMethod::combined;
    detail::fill_summary(data, res);
    res.lrt_bernoulli = detail::bernoulli_statistic(data);

    if (!detail::normal_defined(data)) {
        res.lrt_combined = res.lrt_bernoulli;
        res.df = 1;
    } else {
        res.lrt_normal = detail::normal_statistic(data, opts.sigma);

        const auto fit = detail::normal_mle(data, opts.sigma);
        const auto& g0 = data.group0;
        const auto& g1 = data.group1;
        const auto obs0 = detail::as_measurements(g0);
        const auto obs1 = detail::as_measurements(g1);
        const double pooled_pi = static_cast<double>(g0.n_expressed() + g1.n_expressed()) / static_cast<double>(g0.n_wells + g1.n_wells);

        const double alt = log_likelihood(ModelParams{ res.pi0, fit.mu0, fit.sigma2_0 }, obs0) + log_likelihood(ModelParams{ res.pi1, fit.mu1, fit.sigma2_1 }, obs1);
        const double null = log_likelihood(ModelParams{ pooled_pi, fit.null_mu, fit.null_sigma2 }, obs0) + log_likelihood(ModelParams{ pooled_pi, fit.null_mu, fit.null_sigma2 }, obs1);
        res.lrt_combined = detail::nonneg(2 * (alt - null));
        res.df = opts.sigma == SigmaMode::shared ? 2 : 3;
    }

    res.p_value = detail::chisq_upper(*res.lrt_combined, res.df);
    detail::finish(res);
    return res;
}

/**
 * @brief Two-sample t-test on linear abundances `2^et`, zeros included.
 *
 * A zero standard error (e.g. both groups entirely unexpressed) gives `t = 0`,
 * `p = 1` and sets `degenerate`.
 *
 * @throws InsufficientData if a group has fewer than two wells.
 */
inline TestResult t_test_raw(const TwoGroupData& data, const TestOptions& opts = TestOptions()) {
    if (data.group0.n_wells < 2 || data.group1.n_wells < 2) {
        throw InsufficientData("the t-test needs at least two wells per group");
    }
    TestResult res;
    res.method = TestMethod::t_raw;
    detail::fill_summary(data, res);
    const auto t = detail::two_sample_t(data.group0.linear, data.group1.linear, opts.welch);
    res.t_statistic = t.t;
    res.df = t.df;
    res.p_value = t.p;
    res.degenerate = t.degenerate;
    detail::finish(res);
    return res;
}

inline TestResult run_test(TestMethod method, const TwoGroupData& data, const TestOptions& opts = TestOptions()) {
    switch (method) {
        case TestMethod::combined: return combined_lrt(data, opts);
        case TestMethod::bernoulli: return bernoulli_lrt(data);
        case TestMethod::normal: return normal_lrt(data, opts);
        case TestMethod::t_raw: return t_test_raw(data, opts);
    }
    throw DomainError("unknown test method");
}

/**
 * @brief Benjamini-Hochberg step-up adjusted p-values, in input order.
 *
 * @throws DomainError if any p-value lies outside (0, 1].
 */
inline std::vector<double> fdr_adjust(std::span<const double> p) {
    const auto m = p.size();
    for (auto v : p) {
        if (!(v > 0 && v <= 1)) {
            throw DomainError("p-values must lie in (0, 1]");
        }
    }
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });

    std::vector<double> q(m);
    double running = 1;
    for (std::size_t r = m; r > 0; --r) {
        const auto idx = order[r - 1];
        running = std::min(running, p[idx] * (static_cast<double>(m) / static_cast<double>(r)));
        q[idx] = running;
    }
    return q;
}

}

#endif
