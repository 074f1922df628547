#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "bsdeuq/errors.hpp"
#include "bsdeuq/matrix.hpp"
#include "bsdeuq/problems.hpp"
#include "bsdeuq/rng.hpp"

// Seedable Gaussian increment sampling and Euler-Maruyama forward simulation
// on a uniform time grid. Everything here is a pure function of its inputs.

namespace bsdeuq {

struct TimeGrid {
    double terminal = 1.0; // T
    int steps = 1;         // N

    TimeGrid() = default;
    TimeGrid(double t, int n) : terminal(t), steps(n) {
        if (!(terminal > 0.0) || steps < 1)
            throw std::invalid_argument("TimeGrid: need T > 0 and N >= 1");
    }

    double dt() const { return terminal / static_cast<double>(steps); }
    double time(int n) const { return dt() * static_cast<double>(n); }
};

// Brownian increments, flat layout [m x N x d]; each entry is N(0, dt) and
// independent across (sample, step, component). The draw order is sample-major,
// then step, then component.
struct BrownianBatch {
    std::vector<double> increments;
    std::size_t samples = 0;
    std::size_t steps = 0;
    std::size_t dim = 0;
    std::uint64_t seed = 0;

    const double* at(std::size_t sample, std::size_t step) const {
        return increments.data() + (sample * steps + step) * dim;
    }
    double* at(std::size_t sample, std::size_t step) {
        return increments.data() + (sample * steps + step) * dim;
    }
};

inline BrownianBatch sample_brownian(const TimeGrid& grid, std::size_t m, std::size_t d,
                                     std::uint64_t seed) {
    if (m < 1 || d < 1) throw std::invalid_argument("sample_brownian: dimensions must be positive");
    BrownianBatch batch;
    batch.samples = m;
    batch.steps = static_cast<std::size_t>(grid.steps);
    batch.dim = d;
    batch.seed = seed;
    batch.increments.resize(m * batch.steps * d);
    const double scale = std::sqrt(grid.dt());
    Rng rng(seed);
    for (auto& w : batch.increments) w = scale * rng.normal();
    return batch;
}

// Path tensor [m x (N+1) x d], flat layout.
struct PathBatch {
    std::vector<double> states;
    std::size_t samples = 0;
    std::size_t steps = 0; // N; stores N+1 time points
    std::size_t dim = 0;

    const double* at(std::size_t sample, std::size_t step) const {
        return states.data() + (sample * (steps + 1) + step) * dim;
    }
    double* at(std::size_t sample, std::size_t step) {
        return states.data() + (sample * (steps + 1) + step) * dim;
    }
};

// X_{n+1} = X_n + a(t_n, X_n) dt + b(t_n, X_n) dW_n. Throws SimulationDiverged
// with the first failing (sample, step) when a state goes non-finite.
inline PathBatch euler_maruyama_forward(const BsdeProblem& problem,
                                        const std::vector<double>& x0, const TimeGrid& grid,
                                        const BrownianBatch& batch) {
    const auto d = static_cast<std::size_t>(problem.d);
    if (x0.size() != d) throw std::invalid_argument("euler_maruyama_forward: x0 dim mismatch");
    if (batch.dim != d || batch.steps != static_cast<std::size_t>(grid.steps))
        throw std::invalid_argument("euler_maruyama_forward: batch does not match grid/d");

    PathBatch paths;
    paths.samples = batch.samples;
    paths.steps = batch.steps;
    paths.dim = d;
    paths.states.resize(batch.samples * (batch.steps + 1) * d);

    const double dt = grid.dt();
    std::vector<double> a(d);
    Matrix b;
    for (std::size_t j = 0; j < batch.samples; ++j) {
        double* x = paths.at(j, 0);
        for (std::size_t k = 0; k < d; ++k) x[k] = x0[k];
        for (std::size_t n = 0; n < batch.steps; ++n) {
            const double t = grid.time(static_cast<int>(n));
            const double* xn = paths.at(j, n);
            double* xn1 = paths.at(j, n + 1);
            problem.drift(t, {xn, d}, {a.data(), d});
            problem.diffusion(t, {xn, d}, b);
            const double* dw = batch.at(j, n);
            for (std::size_t k = 0; k < d; ++k) {
                double diff = 0.0;
                const double* brow = b.row_ptr(k);
                for (std::size_t c = 0; c < d; ++c) diff += brow[c] * dw[c];
                xn1[k] = xn[k] + a[k] * dt + diff;
                if (!std::isfinite(xn1[k])) throw SimulationDiverged(j, n);
            }
        }
    }
    return paths;
}

} // namespace bsdeuq
