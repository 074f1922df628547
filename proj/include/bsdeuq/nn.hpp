#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "bsdeuq/errors.hpp"
#include "bsdeuq/matrix.hpp"
#include "bsdeuq/rng.hpp"

// Minimal feed-forward network engine: batched forward passes with optional
// batch normalization, exact reverse-mode gradients for every trainable
// parameter (including the batch-statistics pathway), Adam, and piecewise
// constant learning-rate schedules. All arithmetic is in double precision.

namespace bsdeuq {

enum class Activation { ReLU, Tanh, Sin };
enum class OutputTransform { Identity, Softplus };
enum class ForwardMode { Train, Eval };

// softplus(x) = ln(1 + e^x), computed as max(x,0) + log1p(exp(-|x|)) to avoid
// overflow. Clamped to the smallest positive double so the output is strictly
// positive even where exp(-|x|) underflows.
inline double softplus(double x) {
    const double v = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    return std::max(v, std::numeric_limits<double>::min());
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

struct MlpSpec {
    int input_dim = 1;
    int output_dim = 1;
    int hidden_layers = 0; // L
    int hidden_width = 0;  // eta, ignored when hidden_layers == 0
    Activation hidden_activation = Activation::ReLU;
    std::vector<OutputTransform> output_transform; // per output; empty = all identity
    bool batch_norm = false;

    int affine_count() const { return hidden_layers + 1; }

    int layer_in(int l) const { return l == 0 ? input_dim : hidden_width; }
    int layer_out(int l) const { return l == hidden_layers ? output_dim : hidden_width; }

    OutputTransform transform_of(int j) const {
        return output_transform.empty() ? OutputTransform::Identity
                                        : output_transform[static_cast<std::size_t>(j)];
    }

    // Affine parameters; batch-norm scale/shift add 2*eta per hidden layer.
    long param_count() const {
        long n = 0;
        for (int l = 0; l < affine_count(); ++l)
            n += static_cast<long>(layer_out(l)) * (layer_in(l) + 1);
        if (batch_norm) n += 2L * hidden_layers * hidden_width;
        return n;
    }

    void validate() const {
        if (input_dim < 1 || output_dim < 1) throw std::invalid_argument("MlpSpec: dims must be positive");
        if (hidden_layers < 0) throw std::invalid_argument("MlpSpec: hidden_layers must be >= 0");
        if (hidden_layers > 0 && hidden_width < 1)
            throw std::invalid_argument("MlpSpec: hidden_width must be positive");
        if (!output_transform.empty() &&
            output_transform.size() != static_cast<std::size_t>(output_dim))
            throw std::invalid_argument("MlpSpec: output_transform size mismatch");
        if (batch_norm && hidden_layers == 0)
            throw std::invalid_argument("MlpSpec: batch_norm requires hidden layers");
    }
};

struct BatchNormLayer {
    std::vector<double> gamma;
    std::vector<double> beta;
    std::vector<double> running_mean;
    std::vector<double> running_var;
};

struct MlpParams {
    std::vector<Matrix> weights;              // [out x in] per affine layer
    std::vector<std::vector<double>> biases;  // [out] per affine layer
    std::vector<BatchNormLayer> bn;           // per hidden layer when batch_norm
    std::uint64_t version = 0;                // bumped by optimizer updates
};

struct MlpGrads {
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
    std::vector<std::vector<double>> bn_gamma;
    std::vector<std::vector<double>> bn_beta;
};

namespace detail {
constexpr double kBatchNormEps = 1e-6;
constexpr double kBatchNormMomentum = 0.99;
} // namespace detail

inline MlpGrads make_zero_grads(const MlpSpec& spec) {
    MlpGrads g;
    g.weights.resize(static_cast<std::size_t>(spec.affine_count()));
    g.biases.resize(static_cast<std::size_t>(spec.affine_count()));
    for (int l = 0; l < spec.affine_count(); ++l) {
        g.weights[static_cast<std::size_t>(l)].assign(static_cast<std::size_t>(spec.layer_out(l)),
                                                      static_cast<std::size_t>(spec.layer_in(l)));
        g.biases[static_cast<std::size_t>(l)].assign(static_cast<std::size_t>(spec.layer_out(l)), 0.0);
    }
    if (spec.batch_norm) {
        g.bn_gamma.assign(static_cast<std::size_t>(spec.hidden_layers),
                          std::vector<double>(static_cast<std::size_t>(spec.hidden_width), 0.0));
        g.bn_beta = g.bn_gamma;
    }
    return g;
}

// Xavier-normal initializer: weights ~ N(0, 2/(fan_in+fan_out)) drawn layer by
// layer in row-major order from a single stream; biases zero; batch-norm scale
// one, shift zero, running mean zero, running variance one.
inline MlpParams init_xavier_normal(const MlpSpec& spec, std::uint64_t seed) {
    spec.validate();
    MlpParams p;
    Rng rng(seed);
    for (int l = 0; l < spec.affine_count(); ++l) {
        const auto out = static_cast<std::size_t>(spec.layer_out(l));
        const auto in = static_cast<std::size_t>(spec.layer_in(l));
        Matrix w(out, in);
        const double std_dev = std::sqrt(2.0 / static_cast<double>(in + out));
        for (auto& x : w.data) x = std_dev * rng.normal();
        p.weights.push_back(std::move(w));
        p.biases.emplace_back(out, 0.0);
    }
    if (spec.batch_norm) {
        for (int l = 0; l < spec.hidden_layers; ++l) {
            BatchNormLayer layer;
            const auto width = static_cast<std::size_t>(spec.hidden_width);
            layer.gamma.assign(width, 1.0);
            layer.beta.assign(width, 0.0);
            layer.running_mean.assign(width, 0.0);
            layer.running_var.assign(width, 1.0);
            p.bn.push_back(std::move(layer));
        }
    }
    return p;
}

struct MlpCache {
    Matrix input;
    std::vector<Matrix> act_in;   // per hidden layer, value fed to the activation
    std::vector<Matrix> act_out;  // per hidden layer
    std::vector<Matrix> xhat;     // per hidden layer (batch_norm only)
    std::vector<std::vector<double>> inv_std; // per hidden layer (batch_norm only)
    Matrix out_pre;               // last affine output, before output transform
    bool valid = false;
    std::uint64_t params_version = 0;
};

namespace detail {

inline void affine(const Matrix& x, const Matrix& w, const std::vector<double>& b, Matrix& out) {
    matmul_abt(x, w, out);
    for (std::size_t i = 0; i < out.rows; ++i) {
        double* row = out.row_ptr(i);
        for (std::size_t j = 0; j < out.cols; ++j) row[j] += b[j];
    }
}

inline void apply_activation(Activation act, const Matrix& in, Matrix& out) {
    out.assign(in.rows, in.cols);
    switch (act) {
    case Activation::ReLU:
        for (std::size_t k = 0; k < in.data.size(); ++k) out.data[k] = std::max(in.data[k], 0.0);
        break;
    case Activation::Tanh:
        for (std::size_t k = 0; k < in.data.size(); ++k) out.data[k] = std::tanh(in.data[k]);
        break;
    case Activation::Sin:
        for (std::size_t k = 0; k < in.data.size(); ++k) out.data[k] = std::sin(in.data[k]);
        break;
    }
}

} // namespace detail

// Forward pass. Train mode normalizes with batch statistics, updates running
// statistics, and fills `cache` for a subsequent backward() on the same batch.
// Eval mode uses running statistics and is a pure function of (params, batch).
inline Matrix forward(const MlpSpec& spec, MlpParams& params, const Matrix& batch,
                      ForwardMode mode, MlpCache* cache = nullptr) {
    if (batch.cols != static_cast<std::size_t>(spec.input_dim))
        throw std::invalid_argument("forward: batch width does not match input_dim");
    if (mode == ForwardMode::Train && spec.batch_norm && batch.rows < 2)
        throw std::invalid_argument("forward: batch_norm needs a training batch of at least 2");

    const bool train = mode == ForwardMode::Train;
    if (cache) {
        *cache = MlpCache{};
        cache->input = batch;
        cache->act_in.resize(static_cast<std::size_t>(spec.hidden_layers));
        cache->act_out.resize(static_cast<std::size_t>(spec.hidden_layers));
        if (spec.batch_norm) {
            cache->xhat.resize(static_cast<std::size_t>(spec.hidden_layers));
            cache->inv_std.resize(static_cast<std::size_t>(spec.hidden_layers));
        }
    }

    const std::size_t m = batch.rows;
    Matrix h = batch;
    Matrix u;
    for (int l = 0; l < spec.hidden_layers; ++l) {
        const auto li = static_cast<std::size_t>(l);
        detail::affine(h, params.weights[li], params.biases[li], u);
        if (spec.batch_norm) {
            auto& layer = params.bn[li];
            const std::size_t width = u.cols;
            if (train) {
                std::vector<double> mean(width, 0.0), var(width, 0.0);
                for (std::size_t i = 0; i < m; ++i) {
                    const double* row = u.row_ptr(i);
                    for (std::size_t j = 0; j < width; ++j) mean[j] += row[j];
                }
                for (std::size_t j = 0; j < width; ++j) mean[j] /= static_cast<double>(m);
                for (std::size_t i = 0; i < m; ++i) {
                    const double* row = u.row_ptr(i);
                    for (std::size_t j = 0; j < width; ++j) {
                        const double d = row[j] - mean[j];
                        var[j] += d * d;
                    }
                }
                for (std::size_t j = 0; j < width; ++j) var[j] /= static_cast<double>(m);

                std::vector<double> inv_std(width);
                for (std::size_t j = 0; j < width; ++j)
                    inv_std[j] = 1.0 / std::sqrt(var[j] + detail::kBatchNormEps);

                Matrix xh(m, width);
                for (std::size_t i = 0; i < m; ++i) {
                    const double* row = u.row_ptr(i);
                    double* xrow = xh.row_ptr(i);
                    for (std::size_t j = 0; j < width; ++j)
                        xrow[j] = (row[j] - mean[j]) * inv_std[j];
                }
                for (std::size_t i = 0; i < m; ++i) {
                    const double* xrow = xh.row_ptr(i);
                    double* row = u.row_ptr(i);
                    for (std::size_t j = 0; j < width; ++j)
                        row[j] = layer.gamma[j] * xrow[j] + layer.beta[j];
                }
                constexpr double mom = detail::kBatchNormMomentum;
                for (std::size_t j = 0; j < width; ++j) {
                    layer.running_mean[j] = mom * layer.running_mean[j] + (1.0 - mom) * mean[j];
                    layer.running_var[j] = mom * layer.running_var[j] + (1.0 - mom) * var[j];
                }
                if (cache) {
                    cache->xhat[li] = std::move(xh);
                    cache->inv_std[li] = std::move(inv_std);
                }
            } else {
                for (std::size_t i = 0; i < m; ++i) {
                    double* row = u.row_ptr(i);
                    for (std::size_t j = 0; j < width; ++j) {
                        const double xh =
                            (row[j] - layer.running_mean[j]) /
                            std::sqrt(layer.running_var[j] + detail::kBatchNormEps);
                        row[j] = layer.gamma[j] * xh + layer.beta[j];
                    }
                }
            }
        }
        if (cache) cache->act_in[li] = u;
        detail::apply_activation(spec.hidden_activation, u, h);
        if (cache) cache->act_out[li] = h;
    }

    Matrix out;
    const auto last = static_cast<std::size_t>(spec.hidden_layers);
    detail::affine(h, params.weights[last], params.biases[last], out);
    if (cache) cache->out_pre = out;
    if (!spec.output_transform.empty()) {
        for (std::size_t j = 0; j < out.cols; ++j) {
            if (spec.transform_of(static_cast<int>(j)) == OutputTransform::Softplus)
                for (std::size_t i = 0; i < out.rows; ++i) out(i, j) = softplus(out(i, j));
        }
    }
    if (cache && train) {
        cache->valid = true;
        cache->params_version = params.version;
    }
    return out;
}

inline Matrix forward_eval(const MlpSpec& spec, const MlpParams& params, const Matrix& batch) {
    return forward(spec, const_cast<MlpParams&>(params), batch, ForwardMode::Eval, nullptr);
}

// Reverse pass for d(loss)/d(parameter); `loss_grad` is the gradient with
// respect to the transformed network output. Accumulates into `grads`.
// Requires a cache filled by a train-mode forward on the same parameters.
inline void backward(const MlpSpec& spec, const MlpParams& params, const MlpCache& cache,
                     const Matrix& loss_grad, MlpGrads& grads) {
    if (!cache.valid || cache.params_version != params.version)
        throw std::logic_error("backward: cache is stale; run a train-mode forward first");
    if (!loss_grad.same_shape(cache.out_pre))
        throw std::invalid_argument("backward: loss_grad shape mismatch");

    const std::size_t m = cache.input.rows;
    Matrix g = loss_grad;
    for (std::size_t j = 0; j < g.cols; ++j) {
        if (spec.transform_of(static_cast<int>(j)) == OutputTransform::Softplus)
            for (std::size_t i = 0; i < m; ++i) g(i, j) *= sigmoid(cache.out_pre(i, j));
    }

    const auto last = static_cast<std::size_t>(spec.hidden_layers);
    const Matrix& h_last = spec.hidden_layers > 0 ? cache.act_out[last - 1] : cache.input;
    matmul_atb_accum(g, h_last, grads.weights[last]);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = g.row_ptr(i);
        for (std::size_t j = 0; j < g.cols; ++j) grads.biases[last][j] += row[j];
    }

    Matrix gh; // gradient w.r.t. the activation output of the layer below
    if (spec.hidden_layers > 0) matmul(g, params.weights[last], gh);

    for (int l = spec.hidden_layers - 1; l >= 0; --l) {
        const auto li = static_cast<std::size_t>(l);
        const Matrix& ain = cache.act_in[li];
        const Matrix& aout = cache.act_out[li];
        Matrix ga(m, ain.cols);
        switch (spec.hidden_activation) {
        case Activation::ReLU:
            for (std::size_t k = 0; k < ga.data.size(); ++k)
                ga.data[k] = ain.data[k] > 0.0 ? gh.data[k] : 0.0;
            break;
        case Activation::Tanh:
            for (std::size_t k = 0; k < ga.data.size(); ++k)
                ga.data[k] = gh.data[k] * (1.0 - aout.data[k] * aout.data[k]);
            break;
        case Activation::Sin:
            for (std::size_t k = 0; k < ga.data.size(); ++k)
                ga.data[k] = gh.data[k] * std::cos(ain.data[k]);
            break;
        }

        Matrix gu;
        if (spec.batch_norm) {
            // Through the batch statistics: with xhat cached and s = 1/inv_std,
            // du = gamma*inv_std/m * (m*ga - sum_i ga - xhat * sum_i(ga*xhat)).
            const Matrix& xh = cache.xhat[li];
            const auto& inv_std = cache.inv_std[li];
            const std::size_t width = xh.cols;
            auto& bn = params.bn[li];
            std::vector<double> sum_g(width, 0.0), sum_gx(width, 0.0);
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = ga.row_ptr(i);
                const double* xrow = xh.row_ptr(i);
                for (std::size_t j = 0; j < width; ++j) {
                    sum_g[j] += grow[j];
                    sum_gx[j] += grow[j] * xrow[j];
                }
            }
            for (std::size_t j = 0; j < width; ++j) {
                grads.bn_gamma[li][j] += sum_gx[j];
                grads.bn_beta[li][j] += sum_g[j];
            }
            gu.assign(m, width);
            const double inv_m = 1.0 / static_cast<double>(m);
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = ga.row_ptr(i);
                const double* xrow = xh.row_ptr(i);
                double* urow = gu.row_ptr(i);
                for (std::size_t j = 0; j < width; ++j) {
                    urow[j] = bn.gamma[j] * inv_std[j] *
                              (grow[j] - inv_m * sum_g[j] - xrow[j] * inv_m * sum_gx[j]);
                }
            }
        } else {
            gu = std::move(ga);
        }

        const Matrix& h_below = l > 0 ? cache.act_out[li - 1] : cache.input;
        matmul_atb_accum(gu, h_below, grads.weights[li]);
        for (std::size_t i = 0; i < m; ++i) {
            const double* row = gu.row_ptr(i);
            for (std::size_t j = 0; j < gu.cols; ++j) grads.biases[li][j] += row[j];
        }
        if (l > 0) matmul(gu, params.weights[li], gh);
    }
}

// Fixed traversal order for the trainable parameters: per affine layer the
// weight matrix (row-major) then the bias, followed by the batch-norm scale
// and shift of that hidden layer.
inline void collect_trainable(MlpParams& p, std::vector<double*>& out) {
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        for (auto& x : p.weights[l].data) out.push_back(&x);
        for (auto& x : p.biases[l]) out.push_back(&x);
        if (l < p.bn.size()) {
            for (auto& x : p.bn[l].gamma) out.push_back(&x);
            for (auto& x : p.bn[l].beta) out.push_back(&x);
        }
    }
}

inline void collect_grads(const MlpGrads& g, std::vector<const double*>& out) {
    for (std::size_t l = 0; l < g.weights.size(); ++l) {
        for (const auto& x : g.weights[l].data) out.push_back(&x);
        for (const auto& x : g.biases[l]) out.push_back(&x);
        if (l < g.bn_gamma.size()) {
            for (const auto& x : g.bn_gamma[l]) out.push_back(&x);
            for (const auto& x : g.bn_beta[l]) out.push_back(&x);
        }
    }
}

// L2 regularization lambda * sum(w^2) applies to weight matrices only, never
// to biases or batch-norm scale/shift; the gradient contribution is 2*lambda*w.
inline void apply_weight_decay(const MlpParams& params, MlpGrads& grads, double lambda) {
    if (lambda == 0.0) return;
    for (std::size_t l = 0; l < params.weights.size(); ++l)
        for (std::size_t k = 0; k < params.weights[l].data.size(); ++k)
            grads.weights[l].data[k] += 2.0 * lambda * params.weights[l].data[k];
}

inline double weight_squared_norm(const MlpParams& params) {
    double sum = 0.0;
    for (const auto& w : params.weights)
        for (double x : w.data) sum += x * x;
    return sum;
}

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    long step = 0; // kappa, incremented once per adam step
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void reset(std::size_t n) {
        m.assign(n, 0.0);
        v.assign(n, 0.0);
        step = 0;
    }
};

// Bias-corrected Adam over an explicit parameter/gradient pointer list.
// Throws TrainingDiverged on any non-finite gradient component.
inline void adam_step_flat(const std::vector<double*>& params,
                           const std::vector<const double*>& grads, AdamState& state, double lr) {
    if (params.size() != grads.size()) throw std::invalid_argument("adam_step: size mismatch");
    if (state.m.size() != params.size()) state.reset(params.size());
    for (const double* g : grads)
        if (!std::isfinite(*g)) throw TrainingDiverged("adam_step: non-finite gradient");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        const double g = *grads[k];
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g;
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g;
        const double mh = state.m[k] / bc1;
        const double vh = state.v[k] / bc2;
        *params[k] -= lr * mh / (std::sqrt(vh) + state.eps);
    }
}

inline void adam_step(MlpParams& params, const MlpGrads& grads, AdamState& state, double lr) {
    std::vector<double*> p;
    std::vector<const double*> g;
    collect_trainable(params, p);
    collect_grads(grads, g);
    adam_step_flat(p, g, state, lr);
    params.version += 1;
}

// Piecewise-constant schedule: the rate at (1-based) step kappa is the rate of
// the first boundary >= kappa; steps past the last boundary keep the last rate.
// A constant schedule is the single-boundary case.
struct LrSchedule {
    std::vector<long> boundaries;
    std::vector<double> rates;

    static LrSchedule constant(double rate, long total) { return {{total}, {rate}}; }

    void validate() const {
        if (boundaries.empty() || boundaries.size() != rates.size())
            throw std::invalid_argument("LrSchedule: boundaries/rates length mismatch");
        for (std::size_t i = 1; i < boundaries.size(); ++i)
            if (boundaries[i] <= boundaries[i - 1])
                throw std::invalid_argument("LrSchedule: boundaries must be ascending");
        for (double r : rates)
            if (!(r > 0.0)) throw std::invalid_argument("LrSchedule: rates must be positive");
    }

    double rate_at(long step) const {
        for (std::size_t i = 0; i < boundaries.size(); ++i)
            if (step <= boundaries[i]) return rates[i];
        return rates.back();
    }

    long total_steps() const { return boundaries.back(); }
};

} // namespace bsdeuq
