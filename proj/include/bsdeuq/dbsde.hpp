#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "bsdeuq/nn.hpp"
#include "bsdeuq/parallel.hpp"
#include "bsdeuq/problems.hpp"
#include "bsdeuq/sde.hpp"

// Deep BSDE solver: Y_0 and Z_0 are plain learnable parameters, Z_n for
// n = 1..N-1 comes from one subnet per time point, and training minimizes the
// mean squared terminal mismatch over freshly sampled Brownian batches.

namespace bsdeuq {

// Salts for child-stream derivation; fixed so results replay across runs and
// thread counts.
namespace seed_salt {
constexpr std::uint64_t kModelInit = 0x11;
constexpr std::uint64_t kSubnet = 0x12;
constexpr std::uint64_t kTrainStep = 0x13;
constexpr std::uint64_t kEnsembleRun = 0x14;
constexpr std::uint64_t kRecord = 0x15;
constexpr std::uint64_t kUqModel = 0x16;
constexpr std::uint64_t kEpoch = 0x17;
constexpr std::uint64_t kEvalPaths = 0x18;
constexpr std::uint64_t kParamDraw = 0x19;
constexpr std::uint64_t kSplit = 0x1A;
} // namespace seed_salt

inline MlpSpec default_z_net(int d) {
    MlpSpec spec;
    spec.input_dim = d;
    spec.output_dim = d;
    spec.hidden_layers = 2;
    spec.hidden_width = 10 + d;
    spec.hidden_activation = Activation::ReLU;
    spec.batch_norm = true;
    return spec;
}

struct DbsdeConfig {
    TimeGrid grid{1.0, 1};
    int batch = 128;  // m, fresh sample per optimization step
    long steps = 1;   // total optimization steps
    LrSchedule lr = LrSchedule::constant(1e-2, 1);
    MlpSpec z_net = default_z_net(1);
    double y0_init_min = 0.0;
    double y0_init_max = 1.0;
    std::uint64_t base_seed = 0;
    int eval_paths = 0; // optional eval-mode loss report after training

    void validate(int d) const {
        if (steps < 1) throw std::invalid_argument("DbsdeConfig: steps must be >= 1");
        if (batch < 2 && z_net.batch_norm)
            throw std::invalid_argument("DbsdeConfig: batch must be >= 2 with batch_norm");
        if (batch < 1) throw std::invalid_argument("DbsdeConfig: batch must be positive");
        if (z_net.input_dim != d || z_net.output_dim != d)
            throw std::invalid_argument("DbsdeConfig: z_net must map d -> d");
        if (!(y0_init_min <= y0_init_max))
            throw std::invalid_argument("DbsdeConfig: bad y0 init range");
        lr.validate();
        z_net.validate();
    }
};

struct DbsdeModel {
    double y0 = 0.0;
    std::vector<double> z0;         // [d]
    std::vector<MlpParams> subnets; // exactly N-1 nets, for n = 1..N-1
};

struct DbsdeResult {
    double y0 = 0.0;
    std::vector<double> z0;
    double final_loss = 0.0;
    std::uint64_t seed = 0;
    long steps_run = 0;
    bool diverged = false;
};

struct CheckpointReading {
    long step = 0;
    double y0 = 0.0;
    std::vector<double> z0;
    double loss = 0.0;
};

// Initialization order: y0 ~ U[min, max], then z0 ~ U[-1, 1] per component,
// from one stream; each subnet gets its own Xavier stream.
inline DbsdeModel init_dbsde_model(const BsdeProblem& problem, const DbsdeConfig& config,
                                   std::uint64_t seed) {
    DbsdeModel model;
    Rng rng(derive_seed(seed, seed_salt::kModelInit));
    model.y0 = rng.uniform(config.y0_init_min, config.y0_init_max);
    model.z0.resize(static_cast<std::size_t>(problem.d));
    for (auto& z : model.z0) z = rng.uniform(-1.0, 1.0);
    model.subnets.reserve(static_cast<std::size_t>(config.grid.steps > 0 ? config.grid.steps - 1 : 0));
    for (int n = 1; n < config.grid.steps; ++n)
        model.subnets.push_back(init_xavier_normal(
            config.z_net, derive_seed(seed, seed_salt::kSubnet, static_cast<std::uint64_t>(n))));
    return model;
}

struct RolloutCache {
    PathBatch paths;
    std::vector<Matrix> states;   // X_n as [m x d] for n = 0..N-1
    std::vector<Matrix> z;        // Z_n as [m x d] for n = 0..N-1
    std::vector<std::vector<double>> y; // Y_n for n = 0..N
    std::vector<double> terminal; // g(X_N) per sample
    std::vector<MlpCache> subnet_cache; // for n = 1..N-1
};

// Simulates X forward and runs the Y recursion
//   Y_{n+1} = Y_n - f(t_n, X_n, Y_n, Z_n) dt + Z_n dW_n,
// with Z_0 = theta_0^z and Z_n = phi_n(X_n) for n >= 1. Returns the mean
// squared terminal mismatch (1/m) sum |g(X_N) - Y_N|^2.
inline double rollout_loss(DbsdeModel& model, const BsdeProblem& problem,
                           const DbsdeConfig& config, const BrownianBatch& batch,
                           ForwardMode mode, RolloutCache* cache = nullptr) {
    const auto d = static_cast<std::size_t>(problem.d);
    const std::size_t m = batch.samples;
    const auto n_steps = static_cast<std::size_t>(config.grid.steps);
    if (batch.dim != d || batch.steps != n_steps || m != static_cast<std::size_t>(config.batch))
        throw std::invalid_argument("rollout_loss: batch does not match config");
    if (model.subnets.size() + 1 != n_steps)
        throw std::invalid_argument("rollout_loss: model has wrong subnet count");

    RolloutCache local;
    RolloutCache& c = cache ? *cache : local;
    c.paths = euler_maruyama_forward(problem, problem.x0, config.grid, batch);
    c.states.assign(n_steps, Matrix{});
    c.z.assign(n_steps, Matrix{});
    c.y.assign(n_steps + 1, std::vector<double>(m, 0.0));
    c.subnet_cache.assign(n_steps > 0 ? n_steps - 1 : 0, MlpCache{});
    c.terminal.assign(m, 0.0);

    const double dt = config.grid.dt();
    for (std::size_t i = 0; i < m; ++i) c.y[0][i] = model.y0;

    for (std::size_t n = 0; n < n_steps; ++n) {
        Matrix& x = c.states[n];
        x.assign(m, d);
        for (std::size_t j = 0; j < m; ++j) {
            const double* src = c.paths.at(j, n);
            double* dst = x.row_ptr(j);
            for (std::size_t k = 0; k < d; ++k) dst[k] = src[k];
        }

        Matrix& z = c.z[n];
        if (n == 0) {
            z.assign(m, d);
            for (std::size_t j = 0; j < m; ++j)
                for (std::size_t k = 0; k < d; ++k) z(j, k) = model.z0[k];
        } else {
            z = forward(config.z_net, model.subnets[n - 1], x, mode,
                        mode == ForwardMode::Train ? &c.subnet_cache[n - 1] : nullptr);
        }

        const double t = config.grid.time(static_cast<int>(n));
        for (std::size_t j = 0; j < m; ++j) {
            const double* xj = x.row_ptr(j);
            const double* zj = z.row_ptr(j);
            const double* dw = batch.at(j, n);
            const double f = problem.driver(t, {xj, d}, c.y[n][j], {zj, d});
            double zdw = 0.0;
            for (std::size_t k = 0; k < d; ++k) zdw += zj[k] * dw[k];
            const double y_next = c.y[n][j] - f * dt + zdw;
            if (!std::isfinite(y_next)) throw TrainingDiverged("rollout: non-finite Y");
            c.y[n + 1][j] = y_next;
        }
    }

    double loss = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        c.terminal[j] = problem.terminal({c.paths.at(j, n_steps), d});
        const double diff = c.terminal[j] - c.y[n_steps][j];
        loss += diff * diff;
    }
    loss /= static_cast<double>(m);
    return loss;
}

struct DbsdeGrads {
    double y0 = 0.0;
    std::vector<double> z0;
    std::vector<MlpGrads> subnets;
};

// Exact reverse pass of rollout_loss. Walks the adjoint of the Y recursion,
//   lambda_n = lambda_{n+1} (1 - df/dy dt),  dL/dZ_n = lambda_{n+1} (dW_n - df/dz dt),
// and backpropagates dL/dZ_n through the subnets.
inline void rollout_backward(DbsdeModel& model, const BsdeProblem& problem,
                             const DbsdeConfig& config, const BrownianBatch& batch,
                             const RolloutCache& cache, DbsdeGrads& grads) {
    const auto d = static_cast<std::size_t>(problem.d);
    const std::size_t m = batch.samples;
    const auto n_steps = static_cast<std::size_t>(config.grid.steps);
    const double dt = config.grid.dt();

    grads.y0 = 0.0;
    grads.z0.assign(d, 0.0);
    grads.subnets.resize(model.subnets.size());
    for (auto& g : grads.subnets) g = make_zero_grads(config.z_net);

    std::vector<double> lambda(m);
    for (std::size_t j = 0; j < m; ++j)
        lambda[j] = 2.0 * (cache.y[n_steps][j] - cache.terminal[j]) / static_cast<double>(m);

    Matrix dz(m, d);
    std::vector<double> fz(d);
    for (std::size_t n = n_steps; n-- > 0;) {
        const double t = config.grid.time(static_cast<int>(n));
        const Matrix& x = cache.states[n];
        const Matrix& z = cache.z[n];
        for (std::size_t j = 0; j < m; ++j) {
            const double* xj = x.row_ptr(j);
            const double* zj = z.row_ptr(j);
            const double y = cache.y[n][j];
            problem.driver_dz(t, {xj, d}, y, {zj, d}, {fz.data(), d});
            const double* dw = batch.at(j, n);
            double* dzj = dz.row_ptr(j);
            for (std::size_t k = 0; k < d; ++k) dzj[k] = lambda[j] * (dw[k] - fz[k] * dt);
            const double fy = problem.driver_dy(t, {xj, d}, y, {zj, d});
            lambda[j] *= 1.0 - fy * dt;
        }
        if (n == 0) {
            for (std::size_t j = 0; j < m; ++j) {
                const double* dzj = dz.row_ptr(j);
                for (std::size_t k = 0; k < d; ++k) grads.z0[k] += dzj[k];
            }
        } else {
            backward(config.z_net, model.subnets[n - 1], cache.subnet_cache[n - 1], dz,
                     grads.subnets[n - 1]);
        }
    }
    for (std::size_t j = 0; j < m; ++j) grads.y0 += lambda[j];
}

namespace detail {

inline void collect_model(DbsdeModel& model, std::vector<double*>& p) {
    p.push_back(&model.y0);
    for (auto& z : model.z0) p.push_back(&z);
    for (auto& net : model.subnets) collect_trainable(net, p);
}

inline void collect_model_grads(const DbsdeGrads& g, std::vector<const double*>& p) {
    p.push_back(&g.y0);
    for (const auto& z : g.z0) p.push_back(&z);
    for (const auto& net : g.subnets) collect_grads(net, p);
}

} // namespace detail

struct TrainObservers {
    const std::vector<long>* checkpoint_steps = nullptr; // ascending
    std::vector<CheckpointReading>* readings = nullptr;
    std::vector<double>* loss_curve = nullptr; // per-step training loss
    DbsdeModel* final_model = nullptr;         // copy of the last iterate
};

// Runs `steps` Adam updates, each on a freshly sampled Brownian batch. The
// result is the final iterate; on a non-finite loss or gradient the last
// finite iterate is returned with the diverged flag set. Fully deterministic
// given (problem, config).
inline DbsdeResult train(const BsdeProblem& problem, const DbsdeConfig& config,
                         const TrainObservers& obs = {}) {
    config.validate(problem.d);
    DbsdeModel model = init_dbsde_model(problem, config, config.base_seed);

    std::vector<double*> params;
    detail::collect_model(model, params);
    AdamState adam;
    adam.reset(params.size());

    DbsdeResult result;
    result.seed = config.base_seed;
    result.z0 = model.z0;
    result.y0 = model.y0;

    RolloutCache cache;
    DbsdeGrads grads;
    std::size_t next_checkpoint = 0;
    for (long step = 1; step <= config.steps; ++step) {
        const BrownianBatch batch = sample_brownian(
            config.grid, static_cast<std::size_t>(config.batch),
            static_cast<std::size_t>(problem.d),
            derive_seed(config.base_seed, seed_salt::kTrainStep, static_cast<std::uint64_t>(step)));
        try {
            const double loss = rollout_loss(model, problem, config, batch, ForwardMode::Train, &cache);
            if (!std::isfinite(loss)) throw TrainingDiverged("train: non-finite loss");
            rollout_backward(model, problem, config, batch, cache, grads);
            std::vector<const double*> gptrs;
            detail::collect_model_grads(grads, gptrs);
            adam_step_flat(params, gptrs, adam, config.lr.rate_at(step));
            for (auto& net : model.subnets) net.version += 1;
            result.final_loss = loss;
            result.steps_run = step;
            if (obs.loss_curve) obs.loss_curve->push_back(loss);
            if (obs.checkpoint_steps && obs.readings) {
                while (next_checkpoint < obs.checkpoint_steps->size() &&
                       (*obs.checkpoint_steps)[next_checkpoint] <= step) {
                    obs.readings->push_back({(*obs.checkpoint_steps)[next_checkpoint], model.y0,
                                             model.z0, loss});
                    ++next_checkpoint;
                }
            }
        } catch (const TrainingDiverged&) {
            result.diverged = true;
            break;
        } catch (const SimulationDiverged&) {
            result.diverged = true;
            break;
        }
    }
    result.y0 = model.y0;
    result.z0 = model.z0;
    if (obs.final_model) *obs.final_model = std::move(model);
    return result;
}

// Eval-mode loss of a trained model on freshly sampled paths; batch
// normalization uses running statistics.
inline double eval_loss(DbsdeModel& model, const BsdeProblem& problem, const DbsdeConfig& config,
                        int paths) {
    if (paths < 1) throw std::invalid_argument("eval_loss: paths must be positive");
    DbsdeConfig eval_cfg = config;
    eval_cfg.batch = paths;
    const BrownianBatch batch = sample_brownian(
        config.grid, static_cast<std::size_t>(paths), static_cast<std::size_t>(problem.d),
        derive_seed(config.base_seed, seed_salt::kEvalPaths));
    return rollout_loss(model, problem, eval_cfg, batch, ForwardMode::Eval);
}

// Q independent runs: run 0 uses the configured seed, run q > 0 a derived
// one. Per-run divergence is recorded, never fatal. Output order is by run
// index for any worker count.
inline std::vector<DbsdeResult> ensemble_solve(const BsdeProblem& problem,
                                               const DbsdeConfig& config, int q_runs,
                                               int workers = 1) {
    if (q_runs < 1) throw std::invalid_argument("ensemble_solve: Q must be >= 1");
    std::vector<DbsdeResult> results(static_cast<std::size_t>(q_runs));
    parallel_for(static_cast<std::size_t>(q_runs), workers, [&](std::size_t q) {
        DbsdeConfig run_cfg = config;
        if (q > 0) run_cfg.base_seed = derive_seed(config.base_seed, seed_salt::kEnsembleRun, q);
        results[q] = train(problem, run_cfg);
    });
    return results;
}

} // namespace bsdeuq
