#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bsdeuq/metrics.hpp"
#include "bsdeuq/uq_data.hpp"
#include "bsdeuq/uq_model.hpp"

// Evaluation protocol over a generated dataset: per-record benchmark values
// (ensemble mean/STD/RMSE against the exact solution and their relative
// forms), model estimates, log-domain correlations with exclusion counts, the
// run-count equivalence intersection, rank metrics, and the training-size
// study. Correlations and relative quantities follow the ensemble convention:
// the relative model STD divides by the same model's mean estimate.

namespace bsdeuq {

struct EvalReference {
    std::vector<std::size_t> record_idx;
    std::vector<double> truth;
    std::vector<double> first_run;
    std::vector<double> ens_mean, ens_std, ens_rmse;
    std::vector<double> rel_rmse, rel_std;
    std::vector<std::vector<double>> runs; // per record, for run-count studies
    std::vector<double> dt;                // per record grid step size
    int q_runs = 0;
};

inline EvalReference build_reference(const UqDataset& ds,
                                     const std::vector<std::size_t>& indices, UqTarget target,
                                     int component) {
    const auto sampler = ds.meta.at("sampler").get<ParamSampler>();
    EvalReference ref;
    ref.record_idx = indices;
    for (std::size_t idx : indices) {
        const UqRecord& rec = ds.records[idx];
        std::vector<double> values;
        double truth;
        if (target == UqTarget::Y) {
            values = rec.ens_y;
            truth = truth_y0(sampler, rec.x);
        } else {
            values.reserve(rec.ens_z.size());
            for (const auto& z : rec.ens_z) values.push_back(z[static_cast<std::size_t>(component)]);
            truth = truth_z0(sampler, rec.x)[static_cast<std::size_t>(component)];
        }
        const EnsembleStats s = ensemble_stats(values, truth);
        ref.truth.push_back(truth);
        ref.first_run.push_back(values.front());
        ref.ens_mean.push_back(s.mean);
        ref.ens_std.push_back(s.stdev);
        ref.ens_rmse.push_back(s.rmse);
        ref.rel_rmse.push_back(truth != 0.0 ? s.rmse / std::abs(truth)
                                            : std::numeric_limits<double>::quiet_NaN());
        ref.rel_std.push_back(s.mean != 0.0 ? s.stdev / std::abs(s.mean)
                                            : std::numeric_limits<double>::quiet_NaN());
        ref.runs.push_back(std::move(values));
        ref.dt.push_back(params_from_features(sampler, rec.x).grid.dt());
        ref.q_runs = static_cast<int>(ref.runs.back().size());
    }
    return ref;
}

struct ModelEstimates {
    std::vector<double> mu, sigma, rel_sigma; // rel_sigma = sigma / |mu|
};

inline ModelEstimates model_estimates(const UqModel& model, const UqDataset& ds,
                                      const std::vector<std::size_t>& indices, int component) {
    const std::size_t n_feat = ds.records.front().x.size();
    Matrix features(indices.size(), n_feat);
    for (std::size_t i = 0; i < indices.size(); ++i)
        for (std::size_t j = 0; j < n_feat; ++j) features(i, j) = ds.records[indices[i]].x[j];
    Matrix mu, sigma;
    predict_rows(model, features, mu, sigma);
    ModelEstimates est;
    const auto c = static_cast<std::size_t>(model.target == UqTarget::Y ? 0 : component);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        est.mu.push_back(mu(i, c));
        est.sigma.push_back(sigma(i, c));
        est.rel_sigma.push_back(mu(i, c) != 0.0 ? sigma(i, c) / std::abs(mu(i, c))
                                                : std::numeric_limits<double>::quiet_NaN());
    }
    return est;
}

struct FilteredPair {
    std::vector<double> a, b;
    int excluded = 0;
};

// Keeps indices where both series are finite and strictly positive; the
// excluded count is reported alongside log-domain correlations.
inline FilteredPair filter_log_pair(std::span<const double> a, std::span<const double> b) {
    FilteredPair out;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] > 0.0 && b[i] > 0.0 && std::isfinite(a[i]) && std::isfinite(b[i])) {
            out.a.push_back(a[i]);
            out.b.push_back(b[i]);
        } else {
            ++out.excluded;
        }
    }
    return out;
}

inline double rmse_between(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.empty()) throw std::invalid_argument("rmse_between: size");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(sum / static_cast<double>(a.size()));
}

struct EvalSummary {
    int samples = 0;
    int excluded_ref = 0;   // reference pair exclusions (log domain)
    double corr_rel_rmse_vs_rel_ens_std = 0.0;
    MeanCorrelation corr_rel_rmse_vs_rel_est_std;
    double rmse_truth_vs_ens_mean = 0.0;
    double mean_rmse_truth_vs_est_mean = 0.0;
    double std_rmse_truth_vs_est_mean = 0.0;
    double spearman_ens = 0.0;
    double spearman_model0 = 0.0;
    QEquivalence q_equiv;
};

inline EvalSummary evaluate_models(const EvalReference& ref,
                                   const std::vector<ModelEstimates>& models) {
    if (models.empty()) throw std::invalid_argument("evaluate_models: no models");
    EvalSummary s;
    s.samples = static_cast<int>(ref.truth.size());

    const FilteredPair ens = filter_log_pair(ref.rel_rmse, ref.rel_std);
    s.excluded_ref = ens.excluded;
    s.corr_rel_rmse_vs_rel_ens_std = pearson_log(ens.a, ens.b);

    std::vector<double> per_model_rho;
    for (const auto& m : models) {
        const FilteredPair pair = filter_log_pair(ref.rel_rmse, m.rel_sigma);
        per_model_rho.push_back(pearson_log(pair.a, pair.b));
    }
    s.corr_rel_rmse_vs_rel_est_std.models_used = static_cast<int>(per_model_rho.size());
    for (double r : per_model_rho) s.corr_rel_rmse_vs_rel_est_std.mean += r;
    s.corr_rel_rmse_vs_rel_est_std.mean /= static_cast<double>(per_model_rho.size());
    double var = 0.0;
    for (double r : per_model_rho) {
        const double d = r - s.corr_rel_rmse_vs_rel_est_std.mean;
        var += d * d;
    }
    s.corr_rel_rmse_vs_rel_est_std.stdev = std::sqrt(var / static_cast<double>(per_model_rho.size()));

    s.rmse_truth_vs_ens_mean = rmse_between(ref.truth, ref.ens_mean);
    std::vector<double> model_rmse;
    for (const auto& m : models) model_rmse.push_back(rmse_between(ref.truth, m.mu));
    for (double r : model_rmse) s.mean_rmse_truth_vs_est_mean += r;
    s.mean_rmse_truth_vs_est_mean /= static_cast<double>(model_rmse.size());
    double rvar = 0.0;
    for (double r : model_rmse) {
        const double d = r - s.mean_rmse_truth_vs_est_mean;
        rvar += d * d;
    }
    s.std_rmse_truth_vs_est_mean = std::sqrt(rvar / static_cast<double>(model_rmse.size()));

    {
        const FilteredPair pair = filter_log_pair(ref.rel_rmse, ref.rel_std);
        s.spearman_ens = spearman(pair.a, pair.b);
        const FilteredPair mp = filter_log_pair(ref.rel_rmse, models.front().rel_sigma);
        s.spearman_model0 = spearman(mp.a, mp.b);
    }

    if (ref.q_runs >= 2)
        s.q_equiv = q_equivalence(ref.runs, ref.truth, s.corr_rel_rmse_vs_rel_est_std.mean,
                                  ref.q_runs);
    return s;
}

inline nlohmann::json to_json(const EvalSummary& s) {
    return nlohmann::json{
        {"samples", s.samples},
        {"excluded_log_domain", s.excluded_ref},
        {"corr_rel_rmse_vs_rel_ens_std", s.corr_rel_rmse_vs_rel_ens_std},
        {"mean_corr_rel_rmse_vs_rel_est_std", s.corr_rel_rmse_vs_rel_est_std.mean},
        {"std_corr_rel_rmse_vs_rel_est_std", s.corr_rel_rmse_vs_rel_est_std.stdev},
        {"rmse_truth_vs_ens_mean", s.rmse_truth_vs_ens_mean},
        {"mean_rmse_truth_vs_est_mean", s.mean_rmse_truth_vs_est_mean},
        {"std_rmse_truth_vs_est_mean", s.std_rmse_truth_vs_est_mean},
        {"spearman_rel_rmse_vs_rel_ens_std", s.spearman_ens},
        {"spearman_rel_rmse_vs_rel_est_std", s.spearman_model0},
        {"q_equivalence",
         {{"q", s.q_equiv.q},
          {"below_range", s.q_equiv.below_range},
          {"above_range", s.q_equiv.above_range},
          {"curve", s.q_equiv.curve}}}};
}

struct TrainingSizePoint {
    double fraction = 0.0;
    long runs_used = 0;
    double mean_corr = 0.0;
    double std_corr = 0.0;
};

// Retrains R models on leading fractions of the training split and reports
// the mean correlation on the evaluation indices.
inline std::vector<TrainingSizePoint> training_size_study(
    const UqDataset& ds, UqTarget target, int component, const UqNetConfig& cfg, int r_models,
    const std::vector<double>& fractions, const std::vector<std::size_t>& eval_idx,
    int workers = 1) {
    const EvalReference ref = build_reference(ds, eval_idx, target, component);
    std::vector<TrainingSizePoint> points;
    for (double frac : fractions) {
        if (!(frac > 0.0 && frac <= 1.0))
            throw std::invalid_argument("training_size_study: fraction out of (0, 1]");
        UqDataset sub = ds;
        const auto keep = static_cast<std::size_t>(
            std::max<double>(1.0, std::llround(frac * static_cast<double>(ds.train_idx.size()))));
        sub.train_idx.assign(ds.train_idx.begin(),
                             ds.train_idx.begin() + static_cast<std::ptrdiff_t>(
                                                        std::min(keep, ds.train_idx.size())));
        const auto models = ensemble_of_models(sub, target, cfg, r_models, workers);
        std::vector<ModelEstimates> ests;
        for (const auto& m : models) ests.push_back(model_estimates(m, ds, eval_idx, component));
        const EvalSummary s = evaluate_models(ref, ests);
        points.push_back({frac, static_cast<long>(sub.train_idx.size()),
                          s.corr_rel_rmse_vs_rel_est_std.mean,
                          s.corr_rel_rmse_vs_rel_est_std.stdev});
    }
    return points;
}

struct GridLabelReport {
    double accuracy_ens = 0.0;  // multilabel accuracy, ensemble STD vs RMSE
    double accuracy_model = 0.0; // multilabel accuracy, model STD vs RMSE
    double mrr_ens = 0.0;
    double mrr_model = 0.0;
    int groups = 0;
};

// Per-parameter-set argmin-over-N study on an N-grid dataset; eval_idx must
// hold complete grid blocks (as produced by split_grouped), with ref and est
// built over the same indices.
inline GridLabelReport n_grid_report(const UqDataset& ds, const EvalReference& ref,
                                     const ModelEstimates& est,
                                     const std::vector<std::size_t>& eval_idx) {
    const auto sampler = ds.meta.at("sampler").get<ParamSampler>();
    if (sampler.policy != GridPolicy::FixedTVaryNGrid)
        throw std::invalid_argument("n_grid_report: dataset was not generated over an N grid");
    const std::size_t g = sampler.n_grid.size();
    if (g < 1 || eval_idx.size() % g != 0)
        throw std::invalid_argument("n_grid_report: evaluation indices are not whole grid blocks");
    if (ref.truth.size() != eval_idx.size() || est.rel_sigma.size() != eval_idx.size())
        throw std::invalid_argument("n_grid_report: reference/estimate size mismatch");

    std::vector<int> label_true, label_ens, label_model;
    std::vector<std::vector<int>> ranked_ens, ranked_model;
    const std::size_t groups = eval_idx.size() / g;
    for (std::size_t grp = 0; grp < groups; ++grp) {
        std::vector<double> rmse_r(g), std_r(g), est_r(g);
        for (std::size_t k = 0; k < g; ++k) {
            rmse_r[k] = ref.rel_rmse[grp * g + k];
            std_r[k] = ref.rel_std[grp * g + k];
            est_r[k] = est.rel_sigma[grp * g + k];
        }
        label_true.push_back(argmin_label(rmse_r));
        label_ens.push_back(argmin_label(std_r));
        label_model.push_back(argmin_label(est_r));
        const auto ranked_by = [&](const std::vector<double>& v) {
            std::vector<int> order(g);
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return v[static_cast<std::size_t>(x)] < v[static_cast<std::size_t>(y)]; });
            return order;
        };
        ranked_ens.push_back(ranked_by(std_r));
        ranked_model.push_back(ranked_by(est_r));
    }
    GridLabelReport rep;
    rep.groups = static_cast<int>(groups);
    rep.accuracy_ens = accuracy_multilabel(label_true, label_ens);
    rep.accuracy_model = accuracy_multilabel(label_true, label_model);
    rep.mrr_ens = mrr(label_true, ranked_ens);
    rep.mrr_model = mrr(label_true, ranked_model);
    return rep;
}

struct SchemeComparisonReport {
    double accuracy_ens = 0.0;   // labels from relative ensemble STDs
    double accuracy_model = 0.0; // labels from relative estimated STDs
    int samples = 0;
};

// Binary scheme comparison on a shared parameter set: label 1 where the
// second dataset's solver beats the first on relative RMSE, and likewise for
// the STD-based predictions.
inline SchemeComparisonReport compare_schemes(const EvalReference& ref_a,
                                              const ModelEstimates& est_a,
                                              const EvalReference& ref_b,
                                              const ModelEstimates& est_b) {
    if (ref_a.truth.size() != ref_b.truth.size())
        throw std::invalid_argument("compare_schemes: sample count mismatch");
    const std::vector<int> truth = comparison_labels(ref_a.rel_rmse, ref_b.rel_rmse);
    const std::vector<int> by_ens = comparison_labels(ref_a.rel_std, ref_b.rel_std);
    const std::vector<int> by_model = comparison_labels(est_a.rel_sigma, est_b.rel_sigma);
    SchemeComparisonReport rep;
    rep.samples = static_cast<int>(truth.size());
    rep.accuracy_ens = accuracy_binary(truth, by_ens);
    rep.accuracy_model = accuracy_binary(truth, by_model);
    return rep;
}

} // namespace bsdeuq
