#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

// Benchmark statistics: ensemble RMSE and biased STD, log-domain Pearson
// correlation, the run-count equivalence intersection, Spearman rank
// correlation, accuracy scores, and mean reciprocal rank. Pure functions.

namespace bsdeuq {

struct EnsembleStats {
    double mean = 0.0; // sample mean over Q runs
    double stdev = 0.0; // biased sample STD, divisor Q
    double rmse = 0.0;  // vs the exact solution, when available
    bool has_rmse = false;
};

inline EnsembleStats ensemble_stats(std::span<const double> values,
                                    std::optional<double> truth = std::nullopt) {
    if (values.empty()) throw std::invalid_argument("ensemble_stats: empty ensemble");
    EnsembleStats s;
    const double q = static_cast<double>(values.size());
    for (double v : values) s.mean += v;
    s.mean /= q;
    double var = 0.0;
    for (double v : values) var += (v - s.mean) * (v - s.mean);
    s.stdev = std::sqrt(var / q);
    if (truth) {
        double mse = 0.0;
        for (double v : values) mse += (v - *truth) * (v - *truth);
        s.rmse = std::sqrt(mse / q);
        s.has_rmse = true;
    }
    return s;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2)
        throw std::invalid_argument("pearson: need two series of equal length >= 2");
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if (va == 0.0 || vb == 0.0)
        throw std::domain_error("pearson: undefined correlation (zero variance)");
    return cov / std::sqrt(va * vb);
}

// Pearson correlation of (log10 a, log10 b). All inputs must be strictly
// positive; offenders are listed in the error message.
inline double pearson_log(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2)
        throw std::invalid_argument("pearson_log: need two series of equal length >= 2");
    std::vector<std::size_t> offenders;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!(a[i] > 0.0) || !(b[i] > 0.0)) offenders.push_back(i);
    if (!offenders.empty()) {
        std::ostringstream msg;
        msg << "pearson_log: non-positive input at indices";
        for (std::size_t k = 0; k < offenders.size() && k < 16; ++k) msg << ' ' << offenders[k];
        if (offenders.size() > 16) msg << " ...";
        throw std::domain_error(msg.str());
    }
    std::vector<double> la(a.size()), lb(b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        la[i] = std::log10(a[i]);
        lb[i] = std::log10(b[i]);
    }
    return pearson(la, lb);
}

struct MeanCorrelation {
    double mean = 0.0;
    double stdev = 0.0; // across models, divisor R
    int models_used = 0;
    int models_excluded = 0; // per-model pearson_log failures
};

// Mean and STD across models of pearson_log(reference, estimate_i); models
// whose correlation is undefined are excluded and counted.
inline MeanCorrelation mean_model_correlation(
    const std::vector<std::vector<double>>& per_model_estimates,
    std::span<const double> reference) {
    if (per_model_estimates.empty())
        throw std::invalid_argument("mean_model_correlation: no models");
    MeanCorrelation out;
    std::vector<double> rhos;
    for (const auto& est : per_model_estimates) {
        try {
            rhos.push_back(pearson_log(reference, est));
        } catch (const std::domain_error&) {
            ++out.models_excluded;
        }
    }
    if (rhos.empty()) throw std::domain_error("mean_model_correlation: all models excluded");
    out.models_used = static_cast<int>(rhos.size());
    for (double r : rhos) out.mean += r;
    out.mean /= static_cast<double>(rhos.size());
    double var = 0.0;
    for (double r : rhos) var += (r - out.mean) * (r - out.mean);
    out.stdev = std::sqrt(var / static_cast<double>(rhos.size()));
    return out;
}

struct QEquivalence {
    double q = 0.0;
    bool below_range = false;
    bool above_range = false;
    std::vector<double> curve; // rho at q = 2..q_max
};

// Correlation rho_q(log rel-RMSE, log rel-STD) from the first q runs of each
// per-sample ensemble, for q = 2..q_max, and the first crossing with
// `uq_mean_corr` (linear interpolation in q). Samples with non-positive
// relative quantities at a given q are excluded from that q's correlation.
inline QEquivalence q_equivalence(const std::vector<std::vector<double>>& runs_per_sample,
                                  std::span<const double> truths, double uq_mean_corr,
                                  int q_max) {
    if (q_max < 2) throw std::invalid_argument("q_equivalence: q_max must be >= 2");
    if (runs_per_sample.size() != truths.size() || runs_per_sample.empty())
        throw std::invalid_argument("q_equivalence: samples/truths mismatch");
    for (const auto& runs : runs_per_sample)
        if (runs.size() < static_cast<std::size_t>(q_max))
            throw std::invalid_argument("q_equivalence: ensembles hold fewer than q_max runs");

    QEquivalence out;
    for (int q = 2; q <= q_max; ++q) {
        std::vector<double> rel_rmse, rel_std;
        for (std::size_t i = 0; i < runs_per_sample.size(); ++i) {
            const std::span<const double> first_q{runs_per_sample[i].data(),
                                                  static_cast<std::size_t>(q)};
            const EnsembleStats s = ensemble_stats(first_q, truths[i]);
            const double er = std::abs(truths[i]) > 0.0 ? s.rmse / std::abs(truths[i]) : 0.0;
            const double sr = std::abs(s.mean) > 0.0 ? s.stdev / std::abs(s.mean) : 0.0;
            if (er > 0.0 && sr > 0.0 && std::isfinite(er) && std::isfinite(sr)) {
                rel_rmse.push_back(er);
                rel_std.push_back(sr);
            }
        }
        out.curve.push_back(pearson_log(rel_rmse, rel_std));
    }

    const auto value_at = [&](int q) { return out.curve[static_cast<std::size_t>(q - 2)]; };
    if (uq_mean_corr <= value_at(2)) {
        out.q = 2.0;
        out.below_range = uq_mean_corr < value_at(2);
        return out;
    }
    for (int q = 3; q <= q_max; ++q) {
        const double prev = value_at(q - 1);
        const double cur = value_at(q);
        if ((prev - uq_mean_corr) * (cur - uq_mean_corr) <= 0.0) {
            const double denom = cur - prev;
            const double frac = denom != 0.0 ? (uq_mean_corr - prev) / denom : 0.0;
            out.q = static_cast<double>(q - 1) + frac;
            return out;
        }
    }
    out.q = static_cast<double>(q_max);
    out.above_range = true;
    return out;
}

namespace detail {

// Ranks with ties assigned the average of the positions they span.
inline std::vector<double> average_ranks(std::span<const double> values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0; // 1-based
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

} // namespace detail

// 1 - 6 sum d_i^2 / (n (n^2 - 1)) on average ranks.
inline double spearman(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2)
        throw std::invalid_argument("spearman: need two series of equal length >= 2");
    const auto ra = detail::average_ranks(a);
    const auto rb = detail::average_ranks(b);
    const bool a_const = std::all_of(a.begin(), a.end(), [&](double v) { return v == a[0]; });
    const bool b_const = std::all_of(b.begin(), b.end(), [&](double v) { return v == b[0]; });
    if (a_const || b_const) throw std::domain_error("spearman: undefined for constant input");
    double sum_d2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = ra[i] - rb[i];
        sum_d2 += d * d;
    }
    const double n = static_cast<double>(a.size());
    return 1.0 - 6.0 * sum_d2 / (n * (n * n - 1.0));
}

inline double accuracy_binary(std::span<const int> truth, std::span<const int> pred) {
    if (truth.size() != pred.size() || truth.empty())
        throw std::invalid_argument("accuracy_binary: size mismatch");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i)
        if (truth[i] == pred[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

// Label 1 where the second column improves on the first (b < a), else 0.
inline std::vector<int> comparison_labels(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("comparison_labels: size mismatch");
    std::vector<int> labels(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) labels[i] = b[i] < a[i] ? 1 : 0;
    return labels;
}

// Index of the minimum; ties break to the smallest grid entry (the grid is
// ascending, so the first minimum wins).
inline int argmin_label(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("argmin_label: empty values");
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] < values[best]) best = i;
    return static_cast<int>(best);
}

// Exact one-hot match fraction over the label grid.
inline double accuracy_multilabel(std::span<const int> truth, std::span<const int> pred) {
    return accuracy_binary(truth, pred);
}

// Mean of 1/position (1-based) of each sample's true grid value within its
// prediction-ranked list. Every ranked list must be a permutation holding the
// true label.
inline double mrr(std::span<const int> true_labels,
                  const std::vector<std::vector<int>>& ranked) {
    if (true_labels.size() != ranked.size() || ranked.empty())
        throw std::invalid_argument("mrr: size mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        const auto& list = ranked[i];
        const auto it = std::find(list.begin(), list.end(), true_labels[i]);
        if (it == list.end()) throw std::logic_error("mrr: true label missing from ranked list");
        sum += 1.0 / static_cast<double>(std::distance(list.begin(), it) + 1);
    }
    return sum / static_cast<double>(ranked.size());
}

} // namespace bsdeuq
