#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bsdeuq/dbsde.hpp"
#include "bsdeuq/error_study.hpp"
#include "bsdeuq/io.hpp"
#include "bsdeuq/problems.hpp"
#include "bsdeuq/stats.hpp"
#include "bsdeuq/uq_data.hpp"
#include "bsdeuq/uq_eval.hpp"
#include "bsdeuq/uq_model.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bsdeuq;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitDiverged = 1;
constexpr int kExitUsage = 2;

struct ProblemSetup {
    BsdeProblem problem;
    std::string kind;
    double terminal_time = 0.0;
    json params;
};

ProblemSetup problem_from_json(const json& j) {
    ProblemSetup setup;
    setup.kind = j.at("kind").get<std::string>();
    setup.params = j;
    if (setup.kind == "black_scholes") {
        const auto p = j.get<BlackScholesParams>();
        setup.problem = black_scholes_problem(p);
        setup.terminal_time = p.t;
    } else if (setup.kind == "burgers") {
        const auto p = j.get<BurgersParams>();
        setup.problem = burgers_problem(p);
        setup.terminal_time = p.t;
    } else {
        throw CLI::ValidationError("problem.kind must be black_scholes or burgers");
    }
    return setup;
}

json load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CLI::ValidationError("cannot read config: " + path);
    json j;
    in >> j;
    return j;
}

std::vector<double> parse_double_list(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
    return out;
}

std::vector<long> parse_long_list(const std::string& csv) {
    std::vector<long> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stol(item));
    return out;
}

void stamp(json& j, const std::string& hash, std::uint64_t seed) {
    j["config_hash"] = hash;
    j["base_seed"] = seed;
}

json result_to_json(const DbsdeResult& r) {
    return json{{"y0", r.y0},       {"z0", r.z0},
                {"final_loss", r.final_loss}, {"seed", r.seed},
                {"steps_run", r.steps_run},   {"diverged", r.diverged}};
}

// ---------------------------------------------------------------- solve ----

int cmd_solve(const std::string& config_path, const std::string& out_dir, std::uint64_t seed,
              int /*workers*/) {
    const json cfg_json = load_config(config_path);
    const std::string hash = config_hash(cfg_json);
    const ProblemSetup setup = problem_from_json(cfg_json.at("problem"));

    const auto solver = cfg_json.at("solver").get<SolverSettings>();
    const int n_steps = cfg_json.at("N").get<int>();
    const int eval_paths = cfg_json.value("eval_paths", 0);
    const DbsdeConfig run_cfg =
        solver.make_config(TimeGrid(setup.terminal_time, n_steps), setup.problem.d, seed);

    std::vector<double> losses;
    DbsdeModel final_model;
    TrainObservers obs;
    obs.loss_curve = &losses;
    obs.final_model = &final_model;
    const DbsdeResult result = train(setup.problem, run_cfg, obs);

    fs::create_directories(out_dir);
    json report = result_to_json(result);
    report["problem"] = setup.params;
    if (setup.problem.analytic) {
        report["exact_y0"] = setup.problem.analytic->y0;
        report["exact_z0"] = setup.problem.analytic->z0;
        report["abs_err_y0"] = std::abs(result.y0 - setup.problem.analytic->y0);
        double ez = 0.0;
        for (std::size_t k = 0; k < result.z0.size(); ++k) {
            const double d = result.z0[k] - setup.problem.analytic->z0[k];
            ez += d * d;
        }
        report["abs_err_z0"] = std::sqrt(ez);
    }
    if (eval_paths > 0 && !result.diverged)
        report["eval_loss"] = eval_loss(final_model, setup.problem, run_cfg, eval_paths);
    stamp(report, hash, seed);
    write_json(out_dir + "/solve_report.json", report);

    DatWriter dat(out_dir + "/loss_curve.dat");
    dat.meta("config_hash", hash);
    dat.meta("base_seed", std::to_string(seed));
    dat.columns({"step", "loss"});
    for (std::size_t i = 0; i < losses.size(); ++i) {
        const double row[2] = {static_cast<double>(i + 1), losses[i]};
        dat.row(row);
    }

    std::cout << "y0 = " << result.y0 << "\n";
    std::cout << "z0 =";
    for (double z : result.z0) std::cout << ' ' << z;
    std::cout << "\nfinal_loss = " << result.final_loss << "\n";
    if (setup.problem.analytic)
        std::cout << "abs_err_y0 = " << std::abs(result.y0 - setup.problem.analytic->y0) << "\n";
    if (result.diverged) {
        std::cout << "training diverged after " << result.steps_run << " steps\n";
        return kExitDiverged;
    }
    return kExitOk;
}

// ---------------------------------------------------------- error study ----

int cmd_error_study(const std::string& config_path, const std::string& out_dir,
                    std::uint64_t seed, int workers) {
    const json cfg_json = load_config(config_path);
    const std::string hash = config_hash(cfg_json);
    const ProblemSetup setup = problem_from_json(cfg_json.at("problem"));
    const auto solver = cfg_json.at("solver").get<SolverSettings>();
    const json& study = cfg_json.at("study");
    const auto axis = study.at("axis").get<std::string>();
    const auto checkpoints = study.at("checkpoints").get<std::vector<long>>();
    const int q_runs = study.at("Q").get<int>();
    const int n_steps = cfg_json.at("N").get<int>();

    const auto base_config = [&] {
        return solver.make_config(TimeGrid(setup.terminal_time, n_steps), setup.problem.d, seed);
    };

    std::vector<SweepPoint> points;
    if (axis == "none") {
        points.push_back({"base", base_config()});
    } else if (axis == "lr") {
        for (const auto& v : study.at("values")) {
            SweepPoint p{v.at("label").get<std::string>(), base_config()};
            p.config.lr = v.at("lr").get<LrSchedule>();
            p.config.steps = p.config.lr.total_steps();
            points.push_back(std::move(p));
        }
    } else if (axis == "eta") {
        for (const auto& v : study.at("values")) {
            const int hidden = v.get<int>();
            SweepPoint p{"eta=" + std::to_string(hidden), base_config()};
            p.config.z_net.hidden_width = hidden;
            points.push_back(std::move(p));
        }
    } else if (axis == "N") {
        for (const auto& v : study.at("values")) {
            const int n = v.get<int>();
            SweepPoint p{"N=" + std::to_string(n), base_config()};
            p.config.grid = TimeGrid(setup.terminal_time, n);
            points.push_back(std::move(p));
        }
    } else {
        throw CLI::ValidationError("study.axis must be one of none|lr|eta|N");
    }

    const ErrorStudyCurves curves =
        run_error_study(setup.problem, points, q_runs, checkpoints, workers);

    fs::create_directories(out_dir);
    const auto write_curve = [&](const std::string& path,
                                 const std::vector<std::vector<double>>& series) {
        DatWriter dat(path);
        dat.meta("config_hash", hash);
        dat.meta("base_seed", std::to_string(seed));
        std::vector<std::string> cols{"step"};
        for (const auto& label : curves.labels) cols.push_back(label);
        dat.columns(cols);
        for (std::size_t c = 0; c < curves.checkpoints.size(); ++c) {
            std::vector<double> row{static_cast<double>(curves.checkpoints[c])};
            for (const auto& s : series) row.push_back(s[c]);
            dat.row(row);
        }
    };
    write_curve(out_dir + "/rmse_y0.dat", curves.rmse_y);
    write_curve(out_dir + "/rmse_z0.dat", curves.rmse_z);

    for (std::size_t p = 0; p < points.size(); ++p) {
        const auto write_abs = [&](const std::string& path,
                                   const std::vector<std::vector<double>>& per_run,
                                   const std::vector<double>& rmse) {
            DatWriter dat(path);
            dat.meta("config_hash", hash);
            dat.meta("base_seed", std::to_string(seed));
            std::vector<std::string> cols{"step", "rmse"};
            for (int q = 1; q <= q_runs; ++q) cols.push_back("run" + std::to_string(q));
            dat.columns(cols);
            for (std::size_t c = 0; c < curves.checkpoints.size(); ++c) {
                std::vector<double> row{static_cast<double>(curves.checkpoints[c]), rmse[c]};
                for (int q = 0; q < q_runs; ++q)
                    row.push_back(per_run[static_cast<std::size_t>(q)][c]);
                dat.row(row);
            }
        };
        write_abs(out_dir + "/abs_err_y0_" + curves.labels[p] + ".dat", curves.abs_err_y[p],
                  curves.rmse_y[p]);
        write_abs(out_dir + "/abs_err_z0_" + curves.labels[p] + ".dat", curves.abs_err_z[p],
                  curves.rmse_z[p]);
    }

    json report;
    report["labels"] = curves.labels;
    report["diverged_runs"] = curves.diverged_runs;
    report["Q"] = q_runs;
    stamp(report, hash, seed);
    write_json(out_dir + "/study_report.json", report);

    for (std::size_t p = 0; p < points.size(); ++p)
        std::cout << curves.labels[p] << ": final RMSE(Y0) = " << curves.rmse_y[p].back()
                  << ", diverged runs = " << curves.diverged_runs[p] << "\n";
    return kExitOk;
}

// ------------------------------------------------------------------ gen ----

int cmd_gen(const ParamSampler& sampler, const SolverSettings& solver, const json& snapshot,
            const std::string& out_file, long m, int q_runs, std::uint64_t seed, int workers,
            long valid_count, long test_count) {
    const std::string hash = config_hash(snapshot);
    UqDataset ds = generate(sampler, m, q_runs, solver, workers, seed, out_file);

    const std::size_t total = ds.records.size();
    std::size_t group = 1;
    if (sampler.policy == GridPolicy::FixedTVaryNGrid) group = sampler.n_grid.size();
    const std::size_t units = total / group;
    std::size_t n_valid = valid_count >= 0 ? static_cast<std::size_t>(valid_count) : units / 10;
    std::size_t n_test = test_count >= 0 ? static_cast<std::size_t>(test_count) : units / 10;
    if (n_valid + n_test > 0 && n_valid + n_test < units) {
        if (group > 1)
            split_grouped(ds, n_valid, n_test, derive_seed(seed, seed_salt::kSplit), group);
        else
            split(ds, n_valid, n_test, derive_seed(seed, seed_salt::kSplit));
    }
    ds.meta["config_hash"] = hash;
    save_dataset(ds, out_file);

    const long negatives = count_negative_records(ds);
    long diverged = 0;
    for (const auto& rec : ds.records)
        for (bool d : rec.div) diverged += d ? 1 : 0;
    std::cout << "records: " << total << "\n";
    std::cout << "negative first-run approximations (divergence census): " << negatives << "\n";
    std::cout << "flagged diverged runs: " << diverged << "\n";
    std::cout << "split: train " << ds.train_idx.size() << ", valid " << ds.valid_idx.size()
              << ", test " << ds.test_idx.size() << "\n";
    return kExitOk;
}

// ------------------------------------------------------------- train-uq ----

UqNetConfig net_config_from_flags(int width, int layers, int batch, double l2,
                                  const std::string& lr_csv, const std::string& epochs_csv,
                                  std::uint64_t seed) {
    UqNetConfig cfg;
    cfg.hidden_width = width;
    cfg.hidden_layers = layers;
    cfg.batch = batch;
    cfg.l2 = l2;
    cfg.lr_stages = parse_double_list(lr_csv);
    cfg.epoch_stages = parse_long_list(epochs_csv);
    cfg.seed = seed;
    return cfg;
}

int cmd_train_uq(const std::string& data_path, const std::string& target_name,
                 const std::string& out_dir, int r_models, const UqNetConfig& cfg, int workers) {
    const UqDataset ds = load_dataset(data_path);
    if (!ds.has_split()) throw CLI::ValidationError("dataset has no train/valid/test split");
    const UqTarget target = target_name == "z" ? UqTarget::Z : UqTarget::Y;

    const auto models = ensemble_of_models(ds, target, cfg, r_models, workers);
    fs::create_directories(out_dir);
    json report;
    report["models"] = json::array();
    for (std::size_t i = 0; i < models.size(); ++i) {
        const std::string path =
            out_dir + "/uq_" + target_name + "_model_" + std::to_string(i) + ".json";
        save_uq_model(models[i], path);
        json entry;
        entry["path"] = path;
        entry["diverged"] = models[i].diverged;
        if (!models[i].valid_nll.empty()) entry["final_valid_nll"] = models[i].valid_nll.back();
        if (!models[i].train_nll.empty()) entry["final_train_nll"] = models[i].train_nll.back();
        report["models"].push_back(entry);
        std::cout << "model " << i << ": final valid NLL = "
                  << (models[i].valid_nll.empty() ? 0.0 : models[i].valid_nll.back())
                  << (models[i].diverged ? " (diverged)" : "") << "\n";
    }
    const json cfg_snapshot{{"target", target_name}, {"width", cfg.hidden_width},
                            {"layers", cfg.hidden_layers}, {"batch", cfg.batch},
                            {"l2", cfg.l2}, {"lr_stages", cfg.lr_stages},
                            {"epoch_stages", cfg.epoch_stages}, {"models", r_models}};
    stamp(report, config_hash(cfg_snapshot), cfg.seed);
    write_json(out_dir + "/train_report_" + target_name + ".json", report);
    for (const auto& m : models)
        if (m.diverged) return kExitDiverged;
    return kExitOk;
}

// -------------------------------------------------------------- eval-uq ----

const std::vector<std::size_t>& split_indices(const UqDataset& ds, const std::string& name) {
    if (name == "train") return ds.train_idx;
    if (name == "valid") return ds.valid_idx;
    if (name == "test") return ds.test_idx;
    throw CLI::ValidationError("split must be train|valid|test");
}

int cmd_eval_uq(const std::string& data_path, const std::vector<std::string>& model_paths,
                const std::string& target_name, int component, const std::string& split_name,
                const std::string& out_dir, const std::string& train_size_csv,
                int train_size_models, const UqNetConfig& study_cfg,
                const std::string& compare_data, const std::vector<std::string>& compare_models,
                int workers) {
    const UqDataset ds = load_dataset(data_path);
    if (!ds.has_split()) throw CLI::ValidationError("dataset has no split");
    const UqTarget target = target_name == "z" ? UqTarget::Z : UqTarget::Y;
    const auto& indices = split_indices(ds, split_name);
    if (indices.empty()) throw CLI::ValidationError("empty evaluation split: " + split_name);

    std::vector<UqModel> models;
    for (const auto& p : model_paths) models.push_back(load_uq_model(p));

    const json id{{"data", data_path}, {"models", model_paths}, {"target", target_name},
                  {"component", component}, {"split", split_name}};
    const std::string hash = config_hash(id);
    const std::uint64_t seed = ds.meta.value("seed", std::uint64_t{0});

    const EvalReference ref = build_reference(ds, indices, target, component);
    std::vector<ModelEstimates> ests;
    for (const auto& m : models) ests.push_back(model_estimates(m, ds, indices, component));
    const EvalSummary summary = evaluate_models(ref, ests);

    fs::create_directories(out_dir);
    const std::string suffix = "_" + target_name + "_" + split_name;
    json out = to_json(summary);
    out["target"] = target_name;
    out["component"] = component;
    out["split"] = split_name;

    // Per-sample scatter sorted by the exact solution, log10 domain.
    {
        std::vector<std::size_t> order(ref.truth.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return ref.truth[a] < ref.truth[b];
        });
        DatWriter dat(out_dir + "/log_rel_rmse_std" + suffix + ".dat");
        dat.meta("config_hash", hash);
        dat.meta("base_seed", std::to_string(seed));
        dat.columns({"rank", "log10_rel_rmse", "log10_rel_ens_std", "log10_rel_est_std_model0"});
        for (std::size_t r = 0; r < order.size(); ++r) {
            const std::size_t i = order[r];
            if (!(ref.rel_rmse[i] > 0.0) || !(ref.rel_std[i] > 0.0) ||
                !(ests.front().rel_sigma[i] > 0.0))
                continue;
            const double row[4] = {static_cast<double>(r), std::log10(ref.rel_rmse[i]),
                                   std::log10(ref.rel_std[i]),
                                   std::log10(ests.front().rel_sigma[i])};
            dat.row(row);
        }
    }

    // Relative measures against the per-record step size.
    {
        DatWriter dat(out_dir + "/per_dt" + suffix + ".dat");
        dat.meta("config_hash", hash);
        dat.meta("base_seed", std::to_string(seed));
        dat.columns({"dt", "log10_rel_rmse", "log10_rel_ens_std", "log10_rel_est_std_model0"});
        for (std::size_t i = 0; i < ref.truth.size(); ++i) {
            if (!(ref.rel_rmse[i] > 0.0) || !(ref.rel_std[i] > 0.0) ||
                !(ests.front().rel_sigma[i] > 0.0))
                continue;
            const double row[4] = {ref.dt[i], std::log10(ref.rel_rmse[i]),
                                   std::log10(ref.rel_std[i]),
                                   std::log10(ests.front().rel_sigma[i])};
            dat.row(row);
        }
    }

    // Ensemble-size equivalence curve.
    if (!summary.q_equiv.curve.empty()) {
        DatWriter dat(out_dir + "/q_equivalence" + suffix + ".dat");
        dat.meta("config_hash", hash);
        dat.meta("base_seed", std::to_string(seed));
        dat.meta("intersection_q", format_double(summary.q_equiv.q));
        dat.columns({"q", "corr_rel_ens_std", "mean_corr_rel_est_std", "std_corr_rel_est_std"});
        for (std::size_t c = 0; c < summary.q_equiv.curve.size(); ++c) {
            const double row[4] = {static_cast<double>(c + 2), summary.q_equiv.curve[c],
                                   summary.corr_rel_rmse_vs_rel_est_std.mean,
                                   summary.corr_rel_rmse_vs_rel_est_std.stdev};
            dat.row(row);
        }
    }

    // Training-size study: retrain on leading fractions of the training split.
    if (!train_size_csv.empty()) {
        const auto fractions = parse_double_list(train_size_csv);
        const auto points = training_size_study(ds, target, component, study_cfg,
                                                train_size_models, fractions, indices, workers);
        DatWriter dat(out_dir + "/training_size" + suffix + ".dat");
        dat.meta("config_hash", hash);
        dat.meta("base_seed", std::to_string(seed));
        dat.columns({"runs_used", "mean_corr", "std_corr"});
        json curve = json::array();
        for (const auto& p : points) {
            const double row[3] = {static_cast<double>(p.runs_used), p.mean_corr, p.std_corr};
            dat.row(row);
            curve.push_back({{"fraction", p.fraction}, {"runs_used", p.runs_used},
                             {"mean_corr", p.mean_corr}, {"std_corr", p.std_corr}});
        }
        out["training_size_study"] = curve;
    }

    // Per-parameter-set argmin(N) study on N-grid datasets.
    const auto sampler = ds.meta.at("sampler").get<ParamSampler>();
    if (sampler.policy == GridPolicy::FixedTVaryNGrid) {
        const GridLabelReport rep = n_grid_report(ds, ref, ests.front(), indices);
        out["n_grid"] = {{"groups", rep.groups},
                         {"accuracy_ens", rep.accuracy_ens},
                         {"accuracy_model", rep.accuracy_model},
                         {"mrr_ens", rep.mrr_ens},
                         {"mrr_model", rep.mrr_model},
                         {"grid", sampler.n_grid}};
    }

    // Binary scheme comparison against a second dataset over the same
    // parameter sets.
    if (!compare_data.empty()) {
        const UqDataset other = load_dataset(compare_data);
        if (other.records.size() != ds.records.size())
            throw CLI::ValidationError("compare dataset size mismatch");
        if (compare_models.empty())
            throw CLI::ValidationError("--compare needs --compare-model");
        const UqModel other_model = load_uq_model(compare_models.front());
        const EvalReference ref_b = build_reference(other, indices, target, component);
        const ModelEstimates est_b = model_estimates(other_model, other, indices, component);
        const SchemeComparisonReport rep = compare_schemes(ref, ests.front(), ref_b, est_b);
        out["scheme_comparison"] = {{"samples", rep.samples},
                                    {"accuracy_ens", rep.accuracy_ens},
                                    {"accuracy_model", rep.accuracy_model}};
    }

    stamp(out, hash, seed);
    write_json(out_dir + "/summary" + suffix + ".json", out);
    std::cout << "corr(log rel RMSE, log rel ensemble STD) = "
              << summary.corr_rel_rmse_vs_rel_ens_std << "\n";
    std::cout << "mean corr(log rel RMSE, log rel estimated STD) = "
              << summary.corr_rel_rmse_vs_rel_est_std.mean << " ("
              << summary.corr_rel_rmse_vs_rel_est_std.stdev << ")\n";
    std::cout << "q_equivalence = " << summary.q_equiv.q << "\n";
    return kExitOk;
}

// ------------------------------------------------------------ normality ----

int cmd_normality(const std::string& config_path, const std::string& out_dir,
                  std::uint64_t seed, int workers) {
    const json cfg_json = load_config(config_path);
    const std::string hash = config_hash(cfg_json);
    const ProblemSetup setup = problem_from_json(cfg_json.at("problem"));
    const auto solver = cfg_json.at("solver").get<SolverSettings>();
    const int n_steps = cfg_json.at("N").get<int>();
    const int q_runs = cfg_json.at("Q").get<int>();
    const int bins = cfg_json.value("bins", 15);

    const DbsdeConfig run_cfg =
        solver.make_config(TimeGrid(setup.terminal_time, n_steps), setup.problem.d, seed);
    const auto runs = ensemble_solve(setup.problem, run_cfg, q_runs, workers);

    std::vector<double> y_samples, z_samples;
    for (const auto& r : runs) {
        y_samples.push_back(r.y0);
        z_samples.push_back(r.z0.front());
    }

    fs::create_directories(out_dir);
    json report;
    const auto emit = [&](const std::string& name, const std::vector<double>& sample) {
        const Histogram h = histogram_with_normal_fit(sample, bins);
        json entry{{"fitted_mean", h.fitted_mean}, {"fitted_std", h.fitted_std}};
        if (sample.size() >= 20) {
            const NormalityReport rep = dagostino_pearson(sample);
            entry["p_value"] = rep.p_value;
            entry["k2"] = rep.k2;
            entry["skewness"] = rep.skewness;
            entry["kurtosis"] = rep.kurtosis;
        }
        report[name] = entry;

        DatWriter hist(out_dir + "/hist_" + name + ".dat");
        hist.meta("config_hash", hash);
        hist.meta("base_seed", std::to_string(seed));
        hist.columns({"bin_left", "bin_right", "density"});
        for (std::size_t k = 0; k < h.densities.size(); ++k) {
            const double row[3] = {h.edges[k], h.edges[k + 1], h.densities[k]};
            hist.row(row);
        }
        DatWriter fit(out_dir + "/fit_" + name + ".dat");
        fit.meta("config_hash", hash);
        fit.meta("base_seed", std::to_string(seed));
        fit.columns({"x", "density"});
        const double lo = h.edges.front() - h.fitted_std;
        const double hi = h.edges.back() + h.fitted_std;
        for (int k = 0; k <= 200; ++k) {
            const double x = lo + (hi - lo) * k / 200.0;
            const double row[2] = {x, normal_pdf(x, h.fitted_mean, h.fitted_std)};
            fit.row(row);
        }
    };
    emit("y0", y_samples);
    emit("z0", z_samples);
    stamp(report, hash, seed);
    write_json(out_dir + "/normality_report.json", report);

    if (report.at("y0").contains("p_value"))
        std::cout << "p(y0) = " << report["y0"]["p_value"].get<double>()
                  << ", p(z0) = " << report["z0"]["p_value"].get<double>() << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deep BSDE solver with heteroscedastic uncertainty quantification"};
    app.require_subcommand(1);

    std::string config_path, out_path = "out";
    std::uint64_t seed = 0;
    int workers = 1;

    const auto add_shared = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file")->required();
        cmd->add_option("--out", out_path, "output directory or file");
        cmd->add_option("--seed", seed, "base seed");
        cmd->add_option("--workers", workers, "worker thread count");
    };

    auto* solve = app.add_subcommand("solve", "single DBSDE training run");
    add_shared(solve);

    auto* study = app.add_subcommand("error-study", "hyperparameter sweep with RMSE curves");
    add_shared(study);

    auto* gen = app.add_subcommand("gen", "generate a UQ dataset");
    gen->add_option("--config", config_path, "JSON config with sampler and solver blocks");
    gen->add_option("--out", out_path, "output JSONL file");
    gen->add_option("--seed", seed, "base seed");
    gen->add_option("--workers", workers, "worker thread count");
    long gen_m = 0;
    int gen_q = 0;
    long gen_valid = -1, gen_test = -1;
    std::string gen_problem, gen_policy, gen_n_grid;
    std::vector<double> b_range, s0_range, r_range, t_range;
    double gen_strike = 100.0, gen_drift = 0.05, gen_delta = 0.0, gen_dt = 0.025;
    int gen_n = 10, gen_dim = 5;
    gen->add_option("--M", gen_m, "number of parameter sets");
    gen->add_option("--Q", gen_q, "solver runs per parameter set");
    gen->add_option("--valid", gen_valid, "validation size in sets (default 10%)");
    gen->add_option("--test", gen_test, "test size in sets (default 10%)");
    gen->add_option("--problem", gen_problem, "black_scholes or burgers")
        ->check(CLI::IsMember({"black_scholes", "burgers"}));
    gen->add_option("--policy", gen_policy,
                    "fixed_N_fixed_T | fixed_dt_vary_T | fixed_N_vary_T | fixed_T_vary_N_grid");
    gen->add_option("--b-range", b_range, "volatility range lo hi")->expected(2);
    gen->add_option("--s0-range", s0_range, "spot range lo hi")->expected(2);
    gen->add_option("--r-range", r_range, "rate range lo hi")->expected(2);
    gen->add_option("--t-range", t_range, "maturity range lo hi")->expected(2);
    gen->add_option("--strike", gen_strike, "strike price");
    gen->add_option("--drift", gen_drift, "expected return a");
    gen->add_option("--delta", gen_delta, "dividend rate");
    gen->add_option("--N", gen_n, "fixed step count");
    gen->add_option("--dt", gen_dt, "fixed step size");
    gen->add_option("--n-grid", gen_n_grid, "comma-separated N grid");
    gen->add_option("--dim", gen_dim, "problem dimension for burgers");

    std::string data_path, target_name = "y", split_name = "test";
    int width = 128, layers = 2, batch = 128, r_models = 1, component = 0;
    double l2 = 0.0;
    std::string lr_csv = "1e-3", epochs_csv = "100";

    auto* train_uq_cmd = app.add_subcommand("train-uq", "train UQ models on a dataset");
    train_uq_cmd->add_option("--data", data_path, "dataset JSONL path")->required();
    train_uq_cmd->add_option("--target", target_name, "y or z")
        ->check(CLI::IsMember({"y", "z"}));
    train_uq_cmd->add_option("--out", out_path, "output directory");
    train_uq_cmd->add_option("--models", r_models, "number of models to train");
    train_uq_cmd->add_option("--width", width, "hidden width");
    train_uq_cmd->add_option("--layers", layers, "hidden layers");
    train_uq_cmd->add_option("--batch", batch, "batch size");
    train_uq_cmd->add_option("--l2", l2, "L2 regularization weight");
    train_uq_cmd->add_option("--lr-schedule", lr_csv, "comma-separated stage rates");
    train_uq_cmd->add_option("--epochs-schedule", epochs_csv, "comma-separated stage epochs");
    train_uq_cmd->add_option("--seed", seed, "base seed");
    train_uq_cmd->add_option("--workers", workers, "worker thread count");

    auto* eval = app.add_subcommand("eval-uq", "evaluate UQ models against ensembles");
    std::vector<std::string> model_paths, compare_models;
    std::string train_size_csv, compare_data;
    int train_size_models = 3;
    eval->add_option("--data", data_path, "dataset JSONL path")->required();
    eval->add_option("--model", model_paths, "UQ model checkpoint(s)")->required();
    eval->add_option("--target", target_name, "y or z")->check(CLI::IsMember({"y", "z"}));
    eval->add_option("--component", component, "z component to evaluate");
    eval->add_option("--split", split_name, "train|valid|test")
        ->check(CLI::IsMember({"train", "valid", "test"}));
    eval->add_option("--out", out_path, "output directory");
    eval->add_option("--train-size", train_size_csv,
                     "training-size study fractions, e.g. 0.1,0.5,1.0");
    eval->add_option("--train-size-models", train_size_models, "models per fraction");
    eval->add_option("--width", width, "hidden width (training-size study)");
    eval->add_option("--layers", layers, "hidden layers (training-size study)");
    eval->add_option("--batch", batch, "batch size (training-size study)");
    eval->add_option("--l2", l2, "L2 weight (training-size study)");
    eval->add_option("--lr-schedule", lr_csv, "stage rates (training-size study)");
    eval->add_option("--epochs-schedule", epochs_csv, "stage epochs (training-size study)");
    eval->add_option("--compare", compare_data, "second dataset for scheme comparison");
    eval->add_option("--compare-model", compare_models, "UQ model(s) for the second dataset");
    eval->add_option("--seed", seed, "base seed (training-size study)");
    eval->add_option("--workers", workers, "worker thread count");

    auto* normality = app.add_subcommand("normality", "solver output distribution check");
    add_shared(normality);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (solve->parsed()) return cmd_solve(config_path, out_path, seed, workers);
        if (study->parsed()) return cmd_error_study(config_path, out_path, seed, workers);
        if (gen->parsed()) {
            ParamSampler sampler;
            SolverSettings solver;
            json snapshot;
            if (!config_path.empty()) {
                snapshot = load_config(config_path);
                sampler = snapshot.at("sampler").get<ParamSampler>();
                solver = snapshot.at("solver").get<SolverSettings>();
                if (gen_m <= 0) gen_m = snapshot.value("M", 16L);
                if (gen_q <= 0) gen_q = snapshot.value("Q", 1);
            }
            // Flag overrides on top of the config (or the defaults).
            if (gen->count("--problem"))
                sampler.family = gen_problem == "burgers" ? ProblemFamily::Burgers
                                                          : ProblemFamily::BlackScholes;
            if (gen->count("--policy")) sampler.policy = grid_policy_from_string(gen_policy);
            if (gen->count("--b-range")) sampler.b_range = {b_range[0], b_range[1]};
            if (gen->count("--s0-range")) sampler.s0_range = {s0_range[0], s0_range[1]};
            if (gen->count("--r-range")) sampler.r_range = {r_range[0], r_range[1]};
            if (gen->count("--t-range")) sampler.t_range = {t_range[0], t_range[1]};
            if (gen->count("--strike")) sampler.strike = gen_strike;
            if (gen->count("--drift")) sampler.a = gen_drift;
            if (gen->count("--delta")) sampler.delta = gen_delta;
            if (gen->count("--N")) sampler.n_fixed = gen_n;
            if (gen->count("--dt")) sampler.dt_fixed = gen_dt;
            if (gen->count("--dim")) sampler.burgers_d = gen_dim;
            if (gen->count("--n-grid")) {
                sampler.n_grid.clear();
                for (long n : parse_long_list(gen_n_grid))
                    sampler.n_grid.push_back(static_cast<int>(n));
            }
            if (gen_m <= 0) gen_m = 16;
            if (gen_q <= 0) gen_q = 1;
            snapshot["sampler"] = sampler;
            snapshot["solver"] = solver;
            snapshot["M"] = gen_m;
            snapshot["Q"] = gen_q;
            return cmd_gen(sampler, solver, snapshot, out_path, gen_m, gen_q, seed, workers,
                           gen_valid, gen_test);
        }
        if (train_uq_cmd->parsed()) {
            const UqNetConfig cfg =
                net_config_from_flags(width, layers, batch, l2, lr_csv, epochs_csv, seed);
            return cmd_train_uq(data_path, target_name, out_path, r_models, cfg, workers);
        }
        if (eval->parsed()) {
            const UqNetConfig cfg =
                net_config_from_flags(width, layers, batch, l2, lr_csv, epochs_csv, seed);
            return cmd_eval_uq(data_path, model_paths, target_name, component, split_name,
                               out_path, train_size_csv, train_size_models, cfg, compare_data,
                               compare_models, workers);
        }
        if (normality->parsed()) return cmd_normality(config_path, out_path, seed, workers);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const TrainingDiverged& e) {
        std::cerr << "diverged: " << e.what() << "\n";
        return kExitDiverged;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
