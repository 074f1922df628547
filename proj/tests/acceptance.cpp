// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Run with --only <k> to execute a single criterion.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bsdeuq/dbsde.hpp"
#include "bsdeuq/error_study.hpp"
#include "bsdeuq/io.hpp"
#include "bsdeuq/metrics.hpp"
#include "bsdeuq/problems.hpp"
#include "bsdeuq/stats.hpp"
#include "bsdeuq/uq_data.hpp"
#include "bsdeuq/uq_eval.hpp"
#include "bsdeuq/uq_model.hpp"

namespace fs = std::filesystem;
using namespace bsdeuq;

namespace {

fs::path work_dir() {
    if (const char* env = std::getenv("BSDEUQ_ACCEPTANCE_DIR")) return env;
    return fs::path("acceptance_work");
}

BlackScholesParams paper_call() {
    BlackScholesParams p;
    p.a = 0.05;
    p.b = 0.2;
    p.s0 = 100.0;
    p.r = 0.03;
    p.delta = 0.0;
    p.k = 100.0;
    p.t = 1.0;
    return p;
}

std::string fmt(double v) {
    std::ostringstream ss;
    ss.precision(4);
    ss << v;
    return ss.str();
}

// -------------------------------------------------------------------------
// 1. Analytic oracle agreement.

bool criterion_1(std::ostream& log) {
    const BlackScholesParams p1 = paper_call();
    const auto [y1, z1] = black_scholes_analytic(p1, 0.0, p1.s0);
    BlackScholesParams p2 = paper_call();
    p2.t = 0.33;
    const auto [y2, z2] = black_scholes_analytic(p2, 0.0, p2.s0);
    // The reference values are 4-decimal prints; agreement is within one unit
    // in the last quoted place.
    bool ok = std::abs(y1 - 9.4134) < 1e-4 && std::abs(z1 - 11.9741) < 1e-4 &&
              std::abs(y2 - 5.0679) < 1e-4 && std::abs(z2 - 11.1420) < 1e-4;

    // Independent oracle: discounted call payoff over 1e6 exact log-normal
    // terminal samples under the risk-neutral drift.
    Rng rng(8675309);
    const double drift = (p1.r - p1.delta - 0.5 * p1.b * p1.b) * p1.t;
    const double vol = p1.b * std::sqrt(p1.t);
    const double disc = std::exp(-p1.r * p1.t);
    double sum = 0.0, sum_sq = 0.0;
    const std::size_t n = 1000000;
    for (std::size_t i = 0; i < n; ++i) {
        const double payoff =
            disc * std::max(p1.s0 * std::exp(drift + vol * rng.normal()) - p1.k, 0.0);
        sum += payoff;
        sum_sq += payoff * payoff;
    }
    const double mc = sum / static_cast<double>(n);
    const double se = std::sqrt((sum_sq / static_cast<double>(n) - mc * mc) / static_cast<double>(n));
    ok = ok && std::abs(mc - y1) < 3.0 * se;
    log << "closed form (" << fmt(y1) << ", " << fmt(z1) << ") and (" << fmt(y2) << ", "
        << fmt(z2) << "); MC gap " << fmt(std::abs(mc - y1)) << " vs 3se " << fmt(3.0 * se);
    return ok;
}

// -------------------------------------------------------------------------
// 2. Solver convergence on the Black-Scholes benchmark.

bool criterion_2(std::ostream& log) {
    const BlackScholesParams p = paper_call();
    const BsdeProblem problem = black_scholes_problem(p);
    DbsdeConfig cfg;
    cfg.grid = TimeGrid(p.t, 16);
    cfg.batch = 128;
    cfg.steps = 3000;
    cfg.lr = LrSchedule::constant(1e-2, 3000);
    cfg.z_net = default_z_net(1);
    cfg.y0_init_min = 0.0;
    cfg.y0_init_max = 20.0; // brackets Y0 = 9.4134 at the desk-scale step budget
    cfg.base_seed = 7001;
    const auto runs = ensemble_solve(problem, cfg, 5, 1);
    std::vector<double> y0s;
    for (const auto& r : runs) y0s.push_back(r.y0);
    const double rmse = ensemble_stats(y0s, problem.analytic->y0).rmse;
    log << "ensemble RMSE(Y0) = " << fmt(rmse) << " (tolerance 0.2)";
    return rmse < 0.2;
}

// -------------------------------------------------------------------------
// 3. Solver convergence on the scaled Burgers benchmark.

bool criterion_3(std::ostream& log) {
    BurgersParams p{2.5, 0.25, 5};
    const BsdeProblem problem = burgers_problem(p);
    DbsdeConfig cfg;
    cfg.grid = TimeGrid(p.t, 16);
    cfg.batch = 128;
    cfg.steps = 3000;
    cfg.lr = LrSchedule::constant(1e-2, 3000);
    cfg.z_net = default_z_net(5);
    cfg.y0_init_min = 0.0;
    cfg.y0_init_max = 1.0;
    cfg.base_seed = 7003;
    const DbsdeResult r = train(problem, cfg);
    const double err = std::abs(r.y0 - 0.5);
    log << "|y0 - 0.5| = " << fmt(err) << " (tolerance 0.05)"
        << (r.diverged ? " [diverged]" : "");
    return !r.diverged && err < 0.05;
}

// -------------------------------------------------------------------------
// 4. Full-network gradient suite.

double rollout_grad_check(const BsdeProblem& problem, DbsdeConfig cfg, std::uint64_t seed) {
    DbsdeModel model = init_dbsde_model(problem, cfg, seed);
    const BrownianBatch batch =
        sample_brownian(cfg.grid, static_cast<std::size_t>(cfg.batch),
                        static_cast<std::size_t>(problem.d), derive_seed(seed, 1));
    RolloutCache cache;
    rollout_loss(model, problem, cfg, batch, ForwardMode::Train, &cache);
    DbsdeGrads grads;
    rollout_backward(model, problem, cfg, batch, cache, grads);
    std::vector<double*> pptr;
    detail::collect_model(model, pptr);
    std::vector<const double*> gptr;
    detail::collect_model_grads(grads, gptr);
    // Components below 1e-6 of the dominant gradient are numerically zero;
    // flooring the denominator there keeps finite-difference noise out.
    double grad_scale = 0.0;
    for (const double* g : gptr) grad_scale = std::max(grad_scale, std::abs(*g));
    const double floor = 1e-6 * std::max(1.0, grad_scale);
    const double h = 1e-5;
    double max_rel = 0.0;
    for (std::size_t k = 0; k < pptr.size(); ++k) {
        const double saved = *pptr[k];
        *pptr[k] = saved + h;
        const double up = rollout_loss(model, problem, cfg, batch, ForwardMode::Train);
        *pptr[k] = saved - h;
        const double dn = rollout_loss(model, problem, cfg, batch, ForwardMode::Train);
        *pptr[k] = saved;
        const double fd = (up - dn) / (2.0 * h);
        const double an = *gptr[k];
        max_rel = std::max(max_rel, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), floor}));
    }
    return max_rel;
}

double nll_net_grad_check(int d_target, std::uint64_t seed) {
    MlpSpec spec;
    spec.input_dim = 3;
    spec.output_dim = 2 * d_target;
    spec.hidden_layers = 2;
    spec.hidden_width = 8;
    spec.output_transform.assign(static_cast<std::size_t>(d_target), OutputTransform::Identity);
    spec.output_transform.insert(spec.output_transform.end(), static_cast<std::size_t>(d_target),
                                 OutputTransform::Softplus);
    MlpParams params = init_xavier_normal(spec, seed);
    Rng rng(derive_seed(seed, 2));
    Matrix x(6, 3), t(6, static_cast<std::size_t>(d_target));
    for (auto& v : x.data) v = rng.normal();
    for (auto& v : t.data) v = rng.normal();
    MlpCache cache;
    Matrix out = forward(spec, params, x, ForwardMode::Train, &cache);
    Matrix dout;
    bsdeuq::detail::nll_from_outputs(t, out, &dout);
    MlpGrads grads = make_zero_grads(spec);
    backward(spec, params, cache, dout, grads);

    std::vector<double*> pptr;
    collect_trainable(params, pptr);
    std::vector<const double*> gptr;
    collect_grads(grads, gptr);
    const double h = 1e-5;
    double max_rel = 0.0;
    for (std::size_t k = 0; k < pptr.size(); ++k) {
        const double saved = *pptr[k];
        *pptr[k] = saved + h;
        const double up = bsdeuq::detail::nll_from_outputs(
            t, forward(spec, params, x, ForwardMode::Train), nullptr);
        *pptr[k] = saved - h;
        const double dn = bsdeuq::detail::nll_from_outputs(
            t, forward(spec, params, x, ForwardMode::Train), nullptr);
        *pptr[k] = saved;
        const double fd = (up - dn) / (2.0 * h);
        const double an = *gptr[k];
        max_rel = std::max(max_rel, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
    }
    return max_rel;
}

bool criterion_4(std::ostream& log) {
    // DBSDE rollout on the Black-Scholes driver (d=1, N=4) and the Burgers
    // driver (d=3, N=3), batch-norm subnets, eta <= 8.
    BlackScholesParams bs = paper_call();
    bs.t = 0.5;
    DbsdeConfig cfg_bs;
    cfg_bs.grid = TimeGrid(bs.t, 4);
    cfg_bs.batch = 5;
    cfg_bs.steps = 1;
    cfg_bs.lr = LrSchedule::constant(1e-2, 1);
    cfg_bs.z_net = default_z_net(1);
    cfg_bs.z_net.hidden_width = 6;
    const double e1 = rollout_grad_check(black_scholes_problem(bs), cfg_bs, 41);

    BurgersParams bu{1.5, 0.3, 3};
    DbsdeConfig cfg_bu;
    cfg_bu.grid = TimeGrid(bu.t, 3);
    cfg_bu.batch = 4;
    cfg_bu.steps = 1;
    cfg_bu.lr = LrSchedule::constant(1e-2, 1);
    cfg_bu.z_net = default_z_net(3);
    cfg_bu.z_net.hidden_width = 8;
    const double e2 = rollout_grad_check(burgers_problem(bu), cfg_bu, 42);

    const double e3 = nll_net_grad_check(1, 43); // Y-model loss
    const double e4 = nll_net_grad_check(3, 44); // Z-model loss, d = 3

    log << "max rel errors: rollout " << fmt(e1) << "/" << fmt(e2) << ", nll " << fmt(e3) << "/"
        << fmt(e4) << " (tolerance 1e-3)";
    return e1 < 1e-3 && e2 < 1e-3 && e3 < 1e-3 && e4 < 1e-3;
}

// -------------------------------------------------------------------------
// 5. Bias identity over random ensembles.

bool criterion_5(std::ostream& log) {
    Rng rng(505);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t q = 2 + rng.next_u64() % 12;
        std::vector<double> v(q);
        for (auto& x : v) x = 5.0 * rng.normal() + 2.0;
        const double truth = 2.0 * rng.normal();
        const EnsembleStats s = ensemble_stats(v, truth);
        const double lhs = s.rmse * s.rmse;
        const double rhs = s.stdev * s.stdev + (s.mean - truth) * (s.mean - truth);
        worst = std::max(worst, std::abs(lhs - rhs) / std::max(std::abs(lhs), 1e-300));
    }
    log << "worst relative defect " << worst << " (tolerance 1e-10)";
    return worst < 1e-10;
}

// -------------------------------------------------------------------------
// 6. Synthetic heteroscedastic recovery over 10 seeds.

bool criterion_6(std::ostream& log) {
    int passes = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        UqDataset ds;
        Rng rng(derive_seed(900, seed));
        for (std::size_t i = 0; i < 2000; ++i) {
            UqRecord rec;
            rec.index = static_cast<long>(i);
            const double x = rng.uniform(-1.0, 1.0);
            const double sigma = 0.1 + 0.2 * x * x;
            const double y = std::sin(x) + sigma * rng.normal();
            rec.x = {x};
            rec.y = y;
            rec.z = {y};
            rec.ens_y = {y};
            rec.ens_z = {{y}};
            rec.seeds = {seed};
            rec.div = {false};
            ds.records.push_back(std::move(rec));
        }
        split(ds, 200, 400, derive_seed(901, seed));

        UqNetConfig cfg;
        cfg.hidden_width = 64;
        cfg.hidden_layers = 2;
        cfg.batch = 128;
        cfg.l2 = 1e-5;
        cfg.lr_stages = {1e-2, 1e-3, 3e-4};
        cfg.epoch_stages = {60, 30, 10};
        cfg.seed = derive_seed(902, seed);
        const UqModel model = train_uq(ds, UqTarget::Y, cfg);
        if (model.diverged) continue;

        std::vector<double> sig_hat, sig_true;
        double mae = 0.0;
        for (std::size_t idx : ds.test_idx) {
            const double x = ds.records[idx].x[0];
            const auto [mu, sigma] = predict(model, ds.records[idx].x);
            sig_hat.push_back(sigma[0]);
            sig_true.push_back(0.1 + 0.2 * x * x);
            mae += std::abs(mu[0] - std::sin(x));
        }
        mae /= static_cast<double>(ds.test_idx.size());
        const double corr = pearson(sig_hat, sig_true);
        if (corr > 0.9 && mae < 0.05) ++passes;
    }
    log << passes << "/10 seeds with corr > 0.9 and MAE < 0.05 (need >= 8)";
    return passes >= 8;
}

// -------------------------------------------------------------------------
// 7. Desk-scale UQ pipeline on a D1-style Black-Scholes dataset.

bool criterion_7(std::ostream& log) {
    const fs::path dir = work_dir();
    fs::create_directories(dir);
    const std::string data_path = (dir / "bs_d1_desk.jsonl").string();

    ParamSampler sampler;
    sampler.family = ProblemFamily::BlackScholes;
    sampler.policy = GridPolicy::FixedNFixedT;
    sampler.b_range = {0.1, 0.4};
    sampler.s0_range = {80.0, 120.0};
    sampler.r_range = {0.001, 0.1};
    sampler.t_range = {0.25, 0.25};
    sampler.n_fixed = 10;

    SolverSettings solver;
    solver.batch = 128;
    solver.steps = 2000;
    solver.lr = LrSchedule::constant(1e-2, 2000);
    solver.y0_init_min = 0.0;
    solver.y0_init_max = 25.0; // brackets the T=0.25 moneyness band

    UqDataset ds = generate(sampler, 256, 4, solver, 1, 424242, data_path);
    split(ds, 26, 26, derive_seed(424242, seed_salt::kSplit));

    UqNetConfig cfg;
    cfg.hidden_width = 128;
    cfg.hidden_layers = 2;
    cfg.batch = 128;
    cfg.l2 = 3e-2;
    cfg.lr_stages = {1e-3, 3e-4, 1e-4, 3e-5, 1e-5};
    cfg.epoch_stages = {1000, 100, 100, 100, 100};
    cfg.seed = 77;
    const auto models = ensemble_of_models(ds, UqTarget::Y, cfg, 3, 1);

    const EvalReference ref = build_reference(ds, ds.test_idx, UqTarget::Y, 0);
    std::vector<ModelEstimates> ests;
    for (const auto& m : models) ests.push_back(model_estimates(m, ds, ds.test_idx, 0));
    const EvalSummary summary = evaluate_models(ref, ests);

    log << "rho(ens) = " << fmt(summary.corr_rel_rmse_vs_rel_ens_std) << " (need > 0.85), "
        << "mean rho(model) = " << fmt(summary.corr_rel_rmse_vs_rel_est_std.mean)
        << " (need > 0.8)";
    return summary.corr_rel_rmse_vs_rel_ens_std > 0.85 &&
           summary.corr_rel_rmse_vs_rel_est_std.mean > 0.8;
}

// -------------------------------------------------------------------------
// 8. Metric oracles on random instances plus the closed-form examples.

bool criterion_8(std::ostream& log) {
    Rng rng(808);
    double worst = 0.0;
    bool exact_ok = true;

    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 5 + rng.next_u64() % 60;

        // pearson_log against a direct covariance recomputation.
        std::vector<double> a(n), b(n);
        for (auto& v : a) v = std::exp(rng.normal());
        for (auto& v : b) v = std::exp(rng.normal());
        double ma = 0.0, mb = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            ma += std::log10(a[i]);
            mb += std::log10(b[i]);
        }
        ma /= static_cast<double>(n);
        mb /= static_cast<double>(n);
        double cov = 0.0, va = 0.0, vb = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            cov += (std::log10(a[i]) - ma) * (std::log10(b[i]) - mb);
            va += (std::log10(a[i]) - ma) * (std::log10(a[i]) - ma);
            vb += (std::log10(b[i]) - mb) * (std::log10(b[i]) - mb);
        }
        worst = std::max(worst, std::abs(pearson_log(a, b) - cov / std::sqrt(va * vb)));

        // spearman against Pearson of ranks (tie-free draws).
        std::vector<double> x(n), y(n);
        for (auto& v : x) v = rng.normal();
        for (auto& v : y) v = rng.normal();
        const auto ranks_of = [&](const std::vector<double>& v) {
            std::vector<double> r(v.size(), 1.0);
            for (std::size_t i = 0; i < v.size(); ++i)
                for (std::size_t j = 0; j < v.size(); ++j)
                    if (v[j] < v[i]) r[i] += 1.0;
            return r;
        };
        worst = std::max(worst, std::abs(spearman(x, y) - pearson(ranks_of(x), ranks_of(y))));

        // accuracy and mrr against direct counting.
        std::vector<int> t(n), p(n);
        std::vector<std::vector<int>> ranked(n);
        const std::vector<int> grid{2, 8, 32, 128};
        double acc_direct = 0.0, mrr_direct = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            t[i] = grid[rng.next_u64() % 4];
            p[i] = grid[rng.next_u64() % 4];
            ranked[i] = grid;
            for (std::size_t k = 4; k > 1; --k)
                std::swap(ranked[i][k - 1], ranked[i][rng.next_u64() % k]);
            acc_direct += t[i] == p[i] ? 1.0 : 0.0;
            for (std::size_t pos = 0; pos < 4; ++pos)
                if (ranked[i][pos] == t[i]) mrr_direct += 1.0 / static_cast<double>(pos + 1);
        }
        acc_direct /= static_cast<double>(n);
        mrr_direct /= static_cast<double>(n);
        worst = std::max(worst, std::abs(accuracy_binary(t, p) - acc_direct));
        worst = std::max(worst, std::abs(mrr(t, ranked) - mrr_direct));
    }

    // Closed-form examples.
    {
        const std::vector<double> v{1.0, 3.0};
        const EnsembleStats s = ensemble_stats(v, 2.0);
        exact_ok = exact_ok && s.mean == 2.0 && s.stdev == 1.0 && s.rmse == 1.0;
        std::vector<double> a{1.0, 2.0, 5.0};
        exact_ok = exact_ok && std::abs(pearson_log(a, a) - 1.0) < 1e-15;
        std::vector<double> inv{1.0, 0.5, 0.2};
        exact_ok = exact_ok && std::abs(pearson_log(a, inv) + 1.0) < 1e-12;
        const std::vector<double> s1{1.0, 2.0, 3.0}, s2{3.0, 2.0, 1.0};
        exact_ok = exact_ok && spearman(s1, s2) == -1.0;
        const std::vector<int> l1{1, 0, 1, 0}, l2{0, 1, 0, 1}, l3{1, 0, 0, 1};
        exact_ok = exact_ok && accuracy_binary(l1, l1) == 1.0 && accuracy_binary(l1, l2) == 0.0 &&
                   accuracy_binary(l1, l3) == 0.5;
        const std::vector<int> truth{2, 2};
        const std::vector<std::vector<int>> pos2{{8, 2, 32, 128}, {8, 2, 32, 128}};
        exact_ok = exact_ok && mrr(truth, pos2) == 0.5;
    }

    log << "worst oracle gap " << worst << " (tolerance 1e-12), closed-form "
        << (exact_ok ? "exact" : "BROKEN");
    return worst < 1e-12 && exact_ok;
}

// -------------------------------------------------------------------------
// 9. Normality test calibration.

bool criterion_9(std::ostream& log) {
    Rng rng(909);
    int rejections = 0;
    std::vector<double> sample(5000);
    for (int rep = 0; rep < 200; ++rep) {
        for (auto& v : sample) v = rng.normal();
        if (dagostino_pearson(sample).p_value < 0.05) ++rejections;
    }
    const double rate = rejections / 200.0;

    for (auto& v : sample) v = -std::log(1.0 - rng.uniform());
    const double p_exp = dagostino_pearson(sample).p_value;
    log << "rejection rate " << fmt(rate) << " (need [0.02, 0.08]), exponential p = " << p_exp
        << " (need < 1e-6)";
    return rate >= 0.02 && rate <= 0.08 && p_exp < 1e-6;
}

// -------------------------------------------------------------------------
// 10. Byte-identical re-runs of every command, at any worker count.

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return "<missing:" + path.string() + ">";
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool criterion_10(std::ostream& log) {
    const std::string cli = BSDEUQ_CLI_PATH;
    const fs::path dir = work_dir() / "determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);

    const auto sh = [&](const std::string& args) {
        const std::string cmd = cli + " " + args + " > /dev/null 2>&1";
        return std::system(cmd.c_str()) == 0;
    };

    nlohmann::json problem{{"kind", "black_scholes"}, {"a", 0.05}, {"b", 0.2}, {"s0", 100.0},
                           {"r", 0.03}, {"delta", 0.0}, {"k", 100.0}, {"t", 0.5}};
    nlohmann::json solver{{"batch", 16},
                          {"steps", 40},
                          {"lr", {{"boundaries", {40}}, {"rates", {0.01}}}},
                          {"y0_init_min", 0.0},
                          {"y0_init_max", 10.0},
                          {"hidden_layers", 2},
                          {"hidden_width_offset", 10},
                          {"batch_norm", true}};
    nlohmann::json sampler{{"family", "black_scholes"},
                           {"policy", "fixed_N_fixed_T"},
                           {"b_range", {{"lo", 0.1}, {"hi", 0.4}}},
                           {"s0_range", {{"lo", 80.0}, {"hi", 120.0}}},
                           {"r_range", {{"lo", 0.001}, {"hi", 0.1}}},
                           {"t_range", {{"lo", 0.25}, {"hi", 0.25}}},
                           {"a", 0.05}, {"delta", 0.0}, {"strike", 100.0},
                           {"burgers_d", 1}, {"n_fixed", 4}, {"dt_fixed", 0.025},
                           {"n_grid", nlohmann::json::array()}};

    {
        nlohmann::json cfg{{"problem", problem}, {"N", 4}, {"solver", solver}};
        std::ofstream out(dir / "solve.json");
        out << cfg.dump();
    }
    {
        nlohmann::json cfg{{"problem", problem}, {"N", 4}, {"solver", solver}};
        cfg["study"] = {{"axis", "N"}, {"values", {2, 4}}, {"checkpoints", {20, 40}}, {"Q", 2}};
        std::ofstream out(dir / "study.json");
        out << cfg.dump();
    }
    {
        nlohmann::json cfg{{"sampler", sampler}, {"solver", solver}};
        std::ofstream out(dir / "gen.json");
        out << cfg.dump();
    }

    bool ok = true;
    const auto expect_same = [&](const fs::path& a, const fs::path& b, const char* what) {
        const bool same = slurp(a) == slurp(b);
        if (!same) log << " [mismatch: " << what << "]";
        ok = ok && same;
    };

    // solve, twice.
    ok = ok && sh("solve --config " + (dir / "solve.json").string() + " --seed 5 --out " +
                  (dir / "s1").string());
    ok = ok && sh("solve --config " + (dir / "solve.json").string() + " --seed 5 --out " +
                  (dir / "s2").string());
    expect_same(dir / "s1" / "solve_report.json", dir / "s2" / "solve_report.json", "solve json");
    expect_same(dir / "s1" / "loss_curve.dat", dir / "s2" / "loss_curve.dat", "solve dat");

    // error-study at different worker counts.
    ok = ok && sh("error-study --config " + (dir / "study.json").string() +
                  " --seed 5 --workers 1 --out " + (dir / "e1").string());
    ok = ok && sh("error-study --config " + (dir / "study.json").string() +
                  " --seed 5 --workers 2 --out " + (dir / "e2").string());
    expect_same(dir / "e1" / "rmse_y0.dat", dir / "e2" / "rmse_y0.dat", "study rmse");
    expect_same(dir / "e1" / "abs_err_y0_N=2.dat", dir / "e2" / "abs_err_y0_N=2.dat",
                "study abs");

    // gen at different worker counts.
    ok = ok && sh("gen --config " + (dir / "gen.json").string() +
                  " --M 10 --Q 2 --seed 9 --valid 2 --test 3 --workers 1 --out " +
                  (dir / "d1.jsonl").string());
    ok = ok && sh("gen --config " + (dir / "gen.json").string() +
                  " --M 10 --Q 2 --seed 9 --valid 2 --test 3 --workers 3 --out " +
                  (dir / "d3.jsonl").string());
    expect_same(dir / "d1.jsonl", dir / "d3.jsonl", "gen records");
    expect_same(dir / "d1.jsonl.meta.json", dir / "d3.jsonl.meta.json", "gen meta");

    // train-uq and eval-uq, twice each.
    const std::string train_args = "train-uq --data " + (dir / "d1.jsonl").string() +
                                   " --target y --models 2 --width 16 --batch 8 --lr-schedule "
                                   "1e-2 --epochs-schedule 30 --seed 2 --out ";
    ok = ok && sh(train_args + (dir / "m1").string() + " --workers 1");
    ok = ok && sh(train_args + (dir / "m2").string() + " --workers 2");
    expect_same(dir / "m1" / "uq_y_model_0.json", dir / "m2" / "uq_y_model_0.json", "model 0");
    expect_same(dir / "m1" / "uq_y_model_1.json", dir / "m2" / "uq_y_model_1.json", "model 1");

    const std::string eval_args = "eval-uq --data " + (dir / "d1.jsonl").string() + " --model " +
                                  (dir / "m1" / "uq_y_model_0.json").string() +
                                  " --target y --split test --out ";
    ok = ok && sh(eval_args + (dir / "v1").string());
    ok = ok && sh(eval_args + (dir / "v2").string());
    expect_same(dir / "v1" / "summary_y_test.json", dir / "v2" / "summary_y_test.json",
                "eval json");
    expect_same(dir / "v1" / "q_equivalence_y_test.dat", dir / "v2" / "q_equivalence_y_test.dat",
                "eval dat");

    log << (ok ? " all outputs byte-identical" : " determinism broken");
    return ok;
}

// -------------------------------------------------------------------------
// 11. Pre-propagation discretization ordering on the N sweep.

bool criterion_11(std::ostream& log) {
    const BlackScholesParams p = paper_call();
    const BsdeProblem problem = black_scholes_problem(p);
    int hits = 0;
    std::ostringstream detail;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        double rmse_n2 = 0.0, rmse_n8 = 0.0;
        for (int n : {2, 8, 32}) {
            DbsdeConfig cfg;
            cfg.grid = TimeGrid(p.t, n);
            cfg.batch = 128;
            cfg.steps = 3000;
            cfg.lr = LrSchedule::constant(1e-2, 3000);
            cfg.z_net = default_z_net(1);
            cfg.y0_init_min = 0.0;
            cfg.y0_init_max = 20.0;
            cfg.base_seed = derive_seed(1100, seed);
            const auto runs = ensemble_solve(problem, cfg, 5, 1);
            std::vector<double> y0s;
            for (const auto& r : runs) y0s.push_back(r.y0);
            const double rmse = ensemble_stats(y0s, problem.analytic->y0).rmse;
            if (n == 2) rmse_n2 = rmse;
            if (n == 8) rmse_n8 = rmse;
        }
        detail << " seed" << seed << ":" << fmt(rmse_n8) << "<" << fmt(rmse_n2) << "?";
        if (rmse_n8 < rmse_n2) ++hits;
    }
    log << hits << "/5 seeds with RMSE(N=8) < RMSE(N=2) (need >= 4);" << detail.str();
    return hits >= 4;
}

struct Criterion {
    int id;
    const char* name;
    std::function<bool(std::ostream&)> fn;
};

} // namespace

int main(int argc, char** argv) {
    int only = 0;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--only" && i + 1 < argc) only = std::atoi(argv[++i]);
    }

    const std::vector<Criterion> criteria{
        {1, "analytic oracle agreement", criterion_1},
        {2, "solver convergence, Black-Scholes", criterion_2},
        {3, "solver convergence, Burgers", criterion_3},
        {4, "gradient suite", criterion_4},
        {5, "bias identity", criterion_5},
        {6, "synthetic heteroscedastic recovery", criterion_6},
        {7, "desk-scale UQ pipeline", criterion_7},
        {8, "metric oracles", criterion_8},
        {9, "normality test calibration", criterion_9},
        {10, "determinism", criterion_10},
        {11, "error-study directionality", criterion_11},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        if (only != 0 && c.id != only) continue;
        const auto start = std::chrono::steady_clock::now();
        std::ostringstream detail;
        bool ok = false;
        try {
            ok = c.fn(detail);
        } catch (const std::exception& e) {
            detail << "exception: " << e.what();
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::cout << (ok ? "PASS" : "FAIL") << " criterion " << c.id << ": " << c.name << " ["
                  << detail.str() << "] (" << static_cast<long>(secs) << "s)" << std::endl;
        if (!ok) ++failures;
    }
    return failures == 0 ? 0 : 1;
}
