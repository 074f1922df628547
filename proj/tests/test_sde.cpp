#include <catch_amalgamated.hpp>

#include <cmath>

#include "bsdeuq/sde.hpp"

using namespace bsdeuq;

TEST_CASE("brownian increments have the right moments") {
    // Delta t = 1: 1e6 scalar increments. CLT bound for the mean at 3 sigma
    // is 3e-3 < 0.01; the sample variance should match 1 within 1%.
    TimeGrid grid(1.0, 1);
    const BrownianBatch batch = sample_brownian(grid, 1000000, 1, 2718);
    double sum = 0.0, sum_sq = 0.0;
    for (double w : batch.increments) {
        sum += w;
        sum_sq += w * w;
    }
    const double n = static_cast<double>(batch.increments.size());
    const double mean = sum / n;
    const double var = sum_sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.01);
    CHECK(var == Catch::Approx(1.0).epsilon(0.01));
}

TEST_CASE("brownian sampling is deterministic and scales with dt") {
    TimeGrid grid(2.0, 8);
    const BrownianBatch a = sample_brownian(grid, 32, 3, 99);
    const BrownianBatch b = sample_brownian(grid, 32, 3, 99);
    CHECK(a.increments == b.increments);

    const BrownianBatch c = sample_brownian(grid, 32, 3, 100);
    CHECK(a.increments != c.increments);
}

TEST_CASE("zero drift and diffusion keep paths constant") {
    BsdeProblem prob;
    prob.d = 2;
    prob.x0 = {1.5, -2.0};
    prob.drift = [](double, std::span<const double> x, std::span<double> out) {
        for (std::size_t k = 0; k < x.size(); ++k) out[k] = 0.0;
    };
    prob.diffusion = [](double, std::span<const double>, Matrix& out) { out.assign(2, 2); };

    TimeGrid grid(1.0, 4);
    const BrownianBatch batch = sample_brownian(grid, 8, 2, 1);
    const PathBatch paths = euler_maruyama_forward(prob, prob.x0, grid, batch);
    for (std::size_t j = 0; j < paths.samples; ++j)
        for (std::size_t n = 0; n <= paths.steps; ++n) {
            CHECK(paths.at(j, n)[0] == 1.5);
            CHECK(paths.at(j, n)[1] == -2.0);
        }
}

TEST_CASE("one forced euler step reproduces hand arithmetic") {
    // d=1, a = 0.05 x, b = 0.2 x, x0 = 100, dt = 0.5, dW = 0.1:
    // X1 = 100 + 2.5 + 2.0 = 104.5.
    BsdeProblem prob;
    prob.d = 1;
    prob.x0 = {100.0};
    prob.drift = [](double, std::span<const double> x, std::span<double> out) {
        out[0] = 0.05 * x[0];
    };
    prob.diffusion = [](double, std::span<const double> x, Matrix& out) {
        out.assign(1, 1);
        out(0, 0) = 0.2 * x[0];
    };
    TimeGrid grid(0.5, 1);
    BrownianBatch batch;
    batch.samples = 1;
    batch.steps = 1;
    batch.dim = 1;
    batch.increments = {0.1};
    const PathBatch paths = euler_maruyama_forward(prob, prob.x0, grid, batch);
    CHECK(paths.at(0, 1)[0] == Catch::Approx(104.5).margin(1e-12));
}

TEST_CASE("geometric brownian motion hits its expected terminal mean") {
    const double a = 0.07, b = 0.25, x0 = 100.0, t_end = 1.0;
    BsdeProblem prob;
    prob.d = 1;
    prob.x0 = {x0};
    prob.drift = [a](double, std::span<const double> x, std::span<double> out) {
        out[0] = a * x[0];
    };
    prob.diffusion = [b](double, std::span<const double> x, Matrix& out) {
        out.assign(1, 1);
        out(0, 0) = b * x[0];
    };
    TimeGrid grid(t_end, 16);
    const std::size_t m = 100000;
    const BrownianBatch batch = sample_brownian(grid, m, 1, 31415);
    const PathBatch paths = euler_maruyama_forward(prob, prob.x0, grid, batch);
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        const double xt = paths.at(j, grid.steps)[0];
        sum += xt;
        sum_sq += xt * xt;
    }
    const double mean = sum / static_cast<double>(m);
    const double var = sum_sq / static_cast<double>(m) - mean * mean;
    const double se = std::sqrt(var / static_cast<double>(m));
    // The Euler scheme's terminal mean is exactly x0 (1 + a dt)^N; compare
    // against the continuous-time value with a 3 SE Monte Carlo band plus the
    // scheme's own O(dt) bias bound.
    const double target = x0 * std::exp(a * t_end);
    const double scheme_bias = std::abs(x0 * std::pow(1.0 + a * grid.dt(), grid.steps) - target);
    CHECK(std::abs(mean - target) < 3.0 * se + scheme_bias);
}

TEST_CASE("constant diffusion increments are exactly b dW") {
    const double b = 2.5;
    const int d = 3;
    BsdeProblem prob;
    prob.d = d;
    prob.x0.assign(d, 0.0);
    prob.drift = [](double, std::span<const double> x, std::span<double> out) {
        for (std::size_t k = 0; k < x.size(); ++k) out[k] = 0.0;
    };
    prob.diffusion = [b, d](double, std::span<const double>, Matrix& out) {
        out.assign(d, d);
        for (int k = 0; k < d; ++k) out(k, k) = b;
    };
    TimeGrid grid(0.25, 6);
    const BrownianBatch batch = sample_brownian(grid, 16, d, 7);
    const PathBatch paths = euler_maruyama_forward(prob, prob.x0, grid, batch);
    for (std::size_t j = 0; j < paths.samples; ++j)
        for (std::size_t n = 0; n < paths.steps; ++n)
            for (int k = 0; k < d; ++k) {
                const double lhs = paths.at(j, n + 1)[k];
                const double rhs = paths.at(j, n)[k] + 0.0 * grid.dt() + b * batch.at(j, n)[k];
                CHECK(lhs == rhs);
            }
}

TEST_CASE("non-finite states raise a diverged error with location") {
    BsdeProblem prob;
    prob.d = 1;
    prob.x0 = {1.0};
    prob.drift = [](double, std::span<const double> x, std::span<double> out) {
        out[0] = x[0] * 1e308; // explodes after one step
    };
    prob.diffusion = [](double, std::span<const double>, Matrix& out) { out.assign(1, 1); };
    TimeGrid grid(1.0, 4);
    const BrownianBatch batch = sample_brownian(grid, 2, 1, 3);
    try {
        euler_maruyama_forward(prob, prob.x0, grid, batch);
        FAIL("expected SimulationDiverged");
    } catch (const SimulationDiverged& e) {
        CHECK(e.sample == 0);
        CHECK(e.step == 1); // first step produces a large finite value, second overflows
    }
}

TEST_CASE("batch shape mismatches are rejected") {
    BsdeProblem prob;
    prob.d = 2;
    prob.x0 = {0.0, 0.0};
    prob.drift = [](double, std::span<const double> x, std::span<double> out) {
        for (std::size_t k = 0; k < x.size(); ++k) out[k] = 0.0;
    };
    prob.diffusion = [](double, std::span<const double>, Matrix& out) { out.assign(2, 2); };
    TimeGrid grid(1.0, 4);
    const BrownianBatch wrong_d = sample_brownian(grid, 4, 3, 1);
    CHECK_THROWS_AS(euler_maruyama_forward(prob, prob.x0, grid, wrong_d), std::invalid_argument);
}
