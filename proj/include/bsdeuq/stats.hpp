#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

// Normality assessment via the D'Agostino-Pearson K^2 omnibus test, plus the
// density histogram with a fitted normal used for distribution plots.

namespace bsdeuq {

struct NormalityReport {
    std::size_t n = 0;
    double skewness = 0.0; // g1 = m3 / m2^(3/2)
    double kurtosis = 0.0; // g2 = m4 / m2^2 (not excess)
    double z_skew = 0.0;
    double z_kurt = 0.0;
    double k2 = 0.0;
    double p_value = 1.0; // chi-square with 2 dof: exp(-K^2 / 2)
};

// Standard Z transforms of sample skewness and kurtosis combined as
// K^2 = Z1^2 + Z2^2; the transforms are valid from n >= 20.
inline NormalityReport dagostino_pearson(std::span<const double> sample) {
    const std::size_t size = sample.size();
    if (size < 20) throw std::domain_error("dagostino_pearson: needs n >= 20");
    NormalityReport rep;
    rep.n = size;
    const double n = static_cast<double>(size);

    double mean = 0.0;
    for (double v : sample) mean += v;
    mean /= n;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (double v : sample) {
        const double d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if (m2 == 0.0) throw std::domain_error("dagostino_pearson: degenerate sample");
    rep.skewness = m3 / std::pow(m2, 1.5);
    rep.kurtosis = m4 / (m2 * m2);

    // Skewness transform (D'Agostino).
    {
        const double y = rep.skewness * std::sqrt((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0)));
        const double beta2 = 3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0) /
                             ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
        const double w2 = -1.0 + std::sqrt(2.0 * (beta2 - 1.0));
        const double delta = 1.0 / std::sqrt(0.5 * std::log(w2));
        const double alpha = std::sqrt(2.0 / (w2 - 1.0));
        rep.z_skew = delta * std::asinh(y / alpha);
    }

    // Kurtosis transform (Anscombe-Glynn).
    {
        const double e = 3.0 * (n - 1.0) / (n + 1.0);
        const double var = 24.0 * n * (n - 2.0) * (n - 3.0) /
                           ((n + 1.0) * (n + 1.0) * (n + 3.0) * (n + 5.0));
        const double x = (rep.kurtosis - e) / std::sqrt(var);
        const double sqrt_beta1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0)) *
                                  std::sqrt(6.0 * (n + 3.0) * (n + 5.0) /
                                            (n * (n - 2.0) * (n - 3.0)));
        const double a = 6.0 + 8.0 / sqrt_beta1 *
                                   (2.0 / sqrt_beta1 +
                                    std::sqrt(1.0 + 4.0 / (sqrt_beta1 * sqrt_beta1)));
        const double term1 = 1.0 - 2.0 / (9.0 * a);
        const double denom = 1.0 + x * std::sqrt(2.0 / (a - 4.0));
        const double term2 =
            std::copysign(std::cbrt((1.0 - 2.0 / a) / std::abs(denom)), denom);
        rep.z_kurt = (term1 - term2) / std::sqrt(2.0 / (9.0 * a));
    }

    rep.k2 = rep.z_skew * rep.z_skew + rep.z_kurt * rep.z_kurt;
    rep.p_value = std::exp(-0.5 * rep.k2); // closed-form chi2(2) survival
    return rep;
}

struct Histogram {
    std::vector<double> edges;     // bins + 1, strictly increasing
    std::vector<double> densities; // area sums to one
    double fitted_mean = 0.0;
    double fitted_std = 0.0; // biased sample STD
};

inline Histogram histogram_with_normal_fit(std::span<const double> sample, int bins) {
    if (sample.size() < 2) throw std::invalid_argument("histogram: needs n >= 2");
    if (bins < 1) throw std::invalid_argument("histogram: bins must be positive");
    const auto [lo_it, hi_it] = std::minmax_element(sample.begin(), sample.end());
    const double lo = *lo_it, hi = *hi_it;
    if (!(hi > lo)) throw std::domain_error("histogram: degenerate (zero-range) sample");

    Histogram h;
    h.edges.resize(static_cast<std::size_t>(bins) + 1);
    const double width = (hi - lo) / static_cast<double>(bins);
    for (int k = 0; k <= bins; ++k)
        h.edges[static_cast<std::size_t>(k)] = lo + width * static_cast<double>(k);
    h.edges.back() = hi;

    std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
    for (double v : sample) {
        auto k = static_cast<long>((v - lo) / width);
        k = std::clamp<long>(k, 0, bins - 1);
        ++counts[static_cast<std::size_t>(k)];
    }
    h.densities.resize(static_cast<std::size_t>(bins));
    const double n = static_cast<double>(sample.size());
    for (int k = 0; k < bins; ++k)
        h.densities[static_cast<std::size_t>(k)] =
            static_cast<double>(counts[static_cast<std::size_t>(k)]) / (n * width);

    for (double v : sample) h.fitted_mean += v;
    h.fitted_mean /= n;
    double var = 0.0;
    for (double v : sample) var += (v - h.fitted_mean) * (v - h.fitted_mean);
    h.fitted_std = std::sqrt(var / n);
    return h;
}

inline double normal_pdf(double x, double mean, double stdev) {
    const double z = (x - mean) / stdev;
    return std::exp(-0.5 * z * z) / (stdev * std::sqrt(2.0 * M_PI));
}

} // namespace bsdeuq
