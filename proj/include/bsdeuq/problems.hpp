#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bsdeuq/matrix.hpp"

// The decoupled FBSDE abstraction and the two benchmark instances with their
// closed-form solutions. Problems are immutable after construction.

namespace bsdeuq {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

struct AnalyticSolution {
    double y0 = 0.0;
    std::vector<double> z0; // row vector [1 x d]
};

struct BsdeProblem {
    int d = 1;
    std::vector<double> x0;
    std::function<void(double t, std::span<const double> x, std::span<double> out)> drift;
    std::function<void(double t, std::span<const double> x, Matrix& out)> diffusion; // [d x d]
    std::function<double(double t, std::span<const double> x, double y, std::span<const double> z)>
        driver;
    // Partials of the driver, used by the exact reverse pass of the solver.
    std::function<double(double t, std::span<const double> x, double y, std::span<const double> z)>
        driver_dy;
    std::function<void(double t, std::span<const double> x, double y, std::span<const double> z,
                       std::span<double> out)>
        driver_dz;
    std::function<double(std::span<const double> x)> terminal;
    std::optional<AnalyticSolution> analytic;
};

struct BlackScholesParams {
    double a = 0.05;  // expected return
    double b = 0.2;   // volatility
    double s0 = 100.0;
    double r = 0.03;  // risk-free rate
    double delta = 0.0; // dividend rate
    double k = 100.0; // strike
    double t = 1.0;   // maturity

    void validate() const {
        if (!(b > 0.0 && s0 > 0.0 && k > 0.0 && t > 0.0))
            throw std::invalid_argument("BlackScholesParams: b, s0, k, t must be positive");
    }
};

// Option price and delta-hedge (Y_t, Z_t) of the European call at (t, S_t).
inline std::pair<double, double> black_scholes_analytic(const BlackScholesParams& p, double t,
                                                        double s_t) {
    p.validate();
    if (!(t < p.t)) throw std::domain_error("black_scholes_analytic: requires t < T");
    if (!(s_t > 0.0)) throw std::domain_error("black_scholes_analytic: requires S_t > 0");
    const double tau = p.t - t;
    const double vol_sqrt = p.b * std::sqrt(tau);
    const double d1 = (std::log(s_t / p.k) + (p.r - p.delta + 0.5 * p.b * p.b) * tau) / vol_sqrt;
    const double d2 = d1 - vol_sqrt;
    const double disc_s = s_t * std::exp(-p.delta * tau);
    const double y = disc_s * normal_cdf(d1) - p.k * std::exp(-p.r * tau) * normal_cdf(d2);
    const double z = disc_s * normal_cdf(d1) * p.b;
    return {y, z};
}

inline BsdeProblem black_scholes_problem(const BlackScholesParams& p) {
    p.validate();
    BsdeProblem prob;
    prob.d = 1;
    prob.x0 = {p.s0};
    prob.drift = [a = p.a](double, std::span<const double> x, std::span<double> out) {
        out[0] = a * x[0];
    };
    prob.diffusion = [b = p.b](double, std::span<const double> x, Matrix& out) {
        out.assign(1, 1);
        out(0, 0) = b * x[0];
    };
    const double risk_premium = (p.a - p.r + p.delta) / p.b;
    prob.driver = [r = p.r, risk_premium](double, std::span<const double>, double y,
                                          std::span<const double> z) {
        return -(r * y + risk_premium * z[0]);
    };
    prob.driver_dy = [r = p.r](double, std::span<const double>, double, std::span<const double>) {
        return -r;
    };
    prob.driver_dz = [risk_premium](double, std::span<const double>, double,
                                    std::span<const double>, std::span<double> out) {
        out[0] = -risk_premium;
    };
    prob.terminal = [k = p.k](std::span<const double> x) { return std::max(x[0] - k, 0.0); };
    auto [y0, z0] = black_scholes_analytic(p, 0.0, p.s0);
    prob.analytic = AnalyticSolution{y0, {z0}};
    return prob;
}

struct BurgersParams {
    double b = 25.0; // scalar diffusion
    double t = 0.25; // maturity
    int d = 50;

    void validate() const {
        if (!(b > 0.0 && t > 0.0 && d >= 1))
            throw std::invalid_argument("BurgersParams: need b > 0, t > 0, d >= 1");
    }
};

namespace detail {
inline double logistic(double u) {
    if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
    const double e = std::exp(u);
    return e / (1.0 + e);
}
} // namespace detail

// Closed-form solution of the Burgers-type equation: Y_t = s(u) and
// Z_t = (b/d) s(u)(1-s(u)) 1_d with u = t + (1/d) sum_k x_k.
inline double burgers_y(double t, std::span<const double> x, int d) {
    double sum = 0.0;
    for (double xi : x) sum += xi;
    return detail::logistic(t + sum / static_cast<double>(d));
}

inline BsdeProblem burgers_problem(const BurgersParams& p) {
    p.validate();
    BsdeProblem prob;
    prob.d = p.d;
    prob.x0.assign(static_cast<std::size_t>(p.d), 0.0);
    prob.drift = [](double, std::span<const double> x, std::span<double> out) {
        for (std::size_t k = 0; k < x.size(); ++k) out[k] = 0.0;
    };
    prob.diffusion = [b = p.b, d = p.d](double, std::span<const double>, Matrix& out) {
        out.assign(static_cast<std::size_t>(d), static_cast<std::size_t>(d));
        for (int k = 0; k < d; ++k)
            out(static_cast<std::size_t>(k), static_cast<std::size_t>(k)) = b;
    };
    const double bd = p.b / static_cast<double>(p.d);
    const double shift = (2.0 * p.d + p.b * p.b) / (2.0 * p.b * p.d);
    prob.driver = [bd, shift](double, std::span<const double>, double y,
                              std::span<const double> z) {
        double zsum = 0.0;
        for (double zk : z) zsum += zk;
        return (bd * y - shift) * zsum;
    };
    prob.driver_dy = [bd](double, std::span<const double>, double, std::span<const double> z) {
        double zsum = 0.0;
        for (double zk : z) zsum += zk;
        return bd * zsum;
    };
    prob.driver_dz = [bd, shift](double, std::span<const double>, double y,
                                 std::span<const double>, std::span<double> out) {
        const double c = bd * y - shift;
        for (std::size_t k = 0; k < out.size(); ++k) out[k] = c;
    };
    prob.terminal = [t = p.t, d = p.d](std::span<const double> x) { return burgers_y(t, x, d); };
    const double s = detail::logistic(0.0);
    prob.analytic =
        AnalyticSolution{s, std::vector<double>(static_cast<std::size_t>(p.d), bd * s * (1.0 - s))};
    return prob;
}

inline void to_json(nlohmann::json& j, const BlackScholesParams& p) {
    j = {{"a", p.a}, {"b", p.b}, {"s0", p.s0}, {"r", p.r},
         {"delta", p.delta}, {"k", p.k}, {"t", p.t}};
}

inline void from_json(const nlohmann::json& j, BlackScholesParams& p) {
    j.at("a").get_to(p.a);
    j.at("b").get_to(p.b);
    j.at("s0").get_to(p.s0);
    j.at("r").get_to(p.r);
    j.at("delta").get_to(p.delta);
    j.at("k").get_to(p.k);
    j.at("t").get_to(p.t);
}

inline void to_json(nlohmann::json& j, const BurgersParams& p) {
    j = {{"b", p.b}, {"t", p.t}, {"d", p.d}};
}

inline void from_json(const nlohmann::json& j, BurgersParams& p) {
    j.at("b").get_to(p.b);
    j.at("t").get_to(p.t);
    j.at("d").get_to(p.d);
}

} // namespace bsdeuq
