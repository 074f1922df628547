#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "bsdeuq/dbsde.hpp"
#include "bsdeuq/parallel.hpp"

// Hyperparameter sweep harness: trains Q-run ensembles per sweep point,
// reading (y0, z0) at mid-training checkpoints without restarting, and turns
// the readings into RMSE-versus-step curves against the analytic solution.

namespace bsdeuq {

struct SweepPoint {
    std::string label;
    DbsdeConfig config;
};

struct SweepRuns {
    // readings[q][c] is run q at checkpoint c
    std::vector<std::vector<CheckpointReading>> readings;
    std::vector<DbsdeResult> results;
};

inline SweepRuns ensemble_with_checkpoints(const BsdeProblem& problem, const DbsdeConfig& config,
                                           int q_runs, const std::vector<long>& checkpoints,
                                           int workers) {
    SweepRuns out;
    out.readings.resize(static_cast<std::size_t>(q_runs));
    out.results.resize(static_cast<std::size_t>(q_runs));
    parallel_for(static_cast<std::size_t>(q_runs), workers, [&](std::size_t q) {
        DbsdeConfig run_cfg = config;
        if (q > 0) run_cfg.base_seed = derive_seed(config.base_seed, seed_salt::kEnsembleRun, q);
        TrainObservers obs;
        obs.checkpoint_steps = &checkpoints;
        obs.readings = &out.readings[q];
        out.results[q] = train(problem, run_cfg, obs);
    });
    return out;
}

struct ErrorStudyCurves {
    std::vector<long> checkpoints;
    // Per sweep point, per checkpoint.
    std::vector<std::vector<double>> rmse_y;
    std::vector<std::vector<double>> rmse_z; // first component
    // Per sweep point, per run, per checkpoint: absolute errors.
    std::vector<std::vector<std::vector<double>>> abs_err_y;
    std::vector<std::vector<std::vector<double>>> abs_err_z;
    std::vector<std::string> labels;
    std::vector<int> diverged_runs; // per sweep point
};

// A run that diverged before a checkpoint contributes its last finite iterate
// (readings stop at the divergence step), so curves stay defined; the count
// of diverged runs is reported per sweep point.
inline ErrorStudyCurves run_error_study(const BsdeProblem& problem,
                                        const std::vector<SweepPoint>& points, int q_runs,
                                        const std::vector<long>& checkpoints, int workers) {
    if (!problem.analytic)
        throw std::invalid_argument("run_error_study: needs a problem with an analytic solution");
    const double truth_y = problem.analytic->y0;
    const double truth_z = problem.analytic->z0.front();

    ErrorStudyCurves curves;
    curves.checkpoints = checkpoints;
    for (const auto& point : points) {
        const SweepRuns runs = ensemble_with_checkpoints(problem, point.config, q_runs,
                                                         checkpoints, workers);
        std::vector<double> rmse_y_curve, rmse_z_curve;
        std::vector<std::vector<double>> abs_y(static_cast<std::size_t>(q_runs)),
            abs_z(static_cast<std::size_t>(q_runs));
        int diverged = 0;
        for (const auto& r : runs.results) diverged += r.diverged ? 1 : 0;
        for (std::size_t c = 0; c < checkpoints.size(); ++c) {
            double sum_y = 0.0, sum_z = 0.0;
            for (int q = 0; q < q_runs; ++q) {
                const auto& reads = runs.readings[static_cast<std::size_t>(q)];
                const auto& result = runs.results[static_cast<std::size_t>(q)];
                // Last available reading at or before this checkpoint; a run
                // that diverged earlier contributes its last finite iterate.
                double read_y = result.y0, read_z = result.z0.front();
                if (c < reads.size()) {
                    read_y = reads[c].y0;
                    read_z = reads[c].z0.front();
                } else if (!reads.empty()) {
                    read_y = reads.back().y0;
                    read_z = reads.back().z0.front();
                }
                const double ey = std::abs(read_y - truth_y);
                const double ez = std::abs(read_z - truth_z);
                abs_y[static_cast<std::size_t>(q)].push_back(ey);
                abs_z[static_cast<std::size_t>(q)].push_back(ez);
                sum_y += ey * ey;
                sum_z += ez * ez;
            }
            rmse_y_curve.push_back(std::sqrt(sum_y / q_runs));
            rmse_z_curve.push_back(std::sqrt(sum_z / q_runs));
        }
        curves.rmse_y.push_back(std::move(rmse_y_curve));
        curves.rmse_z.push_back(std::move(rmse_z_curve));
        curves.abs_err_y.push_back(std::move(abs_y));
        curves.abs_err_z.push_back(std::move(abs_z));
        curves.labels.push_back(point.label);
        curves.diverged_runs.push_back(diverged);
    }
    return curves;
}

} // namespace bsdeuq
