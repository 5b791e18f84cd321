#ifndef SCQPCR_ROBUST_HPP
#define SCQPCR_ROBUST_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace scqpcr {

/** Scales the MAD to a standard deviation under normality. */
inline constexpr double default_mad_scale = 1.48;

struct MedianMad {
    double median = std::numeric_limits<double>::quiet_NaN();
    double mad = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

// Consumes its argument.
inline double median_inplace(std::vector<double>& values) {
    const auto n = values.size();
    if (n == 0) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    const auto half = values.begin() + n / 2;
    std::nth_element(values.begin(), half, values.end());
    const double upper = *half;
    if (n % 2 == 1) {
        return upper;
    }
    const double lower = *std::max_element(values.begin(), half);
    return lower + (upper - lower) / 2;
}

}

inline double median(std::vector<double> values) {
    return detail::median_inplace(values);
}

/**
 * @brief Median and (unscaled) median absolute deviation; NaN for empty input.
 */
inline MedianMad median_mad(std::vector<double> values) {
    MedianMad out;
    if (values.empty()) {
        return out;
    }
    out.median = detail::median_inplace(values);
    for (auto& v : values) {
        v = std::abs(v - out.median);
    }
    out.mad = detail::median_inplace(values);
    return out;
}

/**
 * @brief Robust z-score `(x - median) / (k * MAD)`.
 *
 * When the MAD is zero, values equal to the median score 0 and any other value
 * scores a signed infinity, so it exceeds every finite threshold.
 */
inline double robust_score(double x, const MedianMad& stats, double k) {
    const double delta = x - stats.median;
    if (stats.mad > 0) {
        return delta / (k * stats.mad);
    }
    if (delta == 0) {
        return 0;
    }
    return std::copysign(std::numeric_limits<double>::infinity(), delta);
}

}

#endif
