#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bsdeuq/checkpoint.hpp"
#include "bsdeuq/nn.hpp"
#include "bsdeuq/parallel.hpp"
#include "bsdeuq/uq_data.hpp"

// Heteroscedastic Gaussian regression: one network with a mean head and a
// softplus STD head per output, trained by negative log-likelihood with L2
// regularization on the weights. Targets y (scalar) and z (all d components
// jointly, 2d outputs).

namespace bsdeuq {

constexpr double kSigmaFloor = 1e-6; // added to the softplus head output

// Feature normalization fitted on the training split only; near-constant
// coordinates get their STD floored to one so fixed parameters pass through.
struct Normalizer {
    std::vector<double> mean;
    std::vector<double> stdev;

    static Normalizer fit(const Matrix& rows) {
        if (rows.rows == 0) throw std::invalid_argument("Normalizer: empty fit set");
        Normalizer n;
        n.mean.assign(rows.cols, 0.0);
        n.stdev.assign(rows.cols, 0.0);
        for (std::size_t i = 0; i < rows.rows; ++i)
            for (std::size_t j = 0; j < rows.cols; ++j) n.mean[j] += rows(i, j);
        for (auto& m : n.mean) m /= static_cast<double>(rows.rows);
        for (std::size_t i = 0; i < rows.rows; ++i)
            for (std::size_t j = 0; j < rows.cols; ++j) {
                const double d = rows(i, j) - n.mean[j];
                n.stdev[j] += d * d;
            }
        for (auto& s : n.stdev) {
            s = std::sqrt(s / static_cast<double>(rows.rows));
            if (s < 1e-12) s = 1.0;
        }
        return n;
    }

    void apply(Matrix& rows) const {
        if (rows.cols != mean.size()) throw std::invalid_argument("Normalizer: width mismatch");
        for (std::size_t i = 0; i < rows.rows; ++i)
            for (std::size_t j = 0; j < rows.cols; ++j)
                rows(i, j) = (rows(i, j) - mean[j]) / stdev[j];
    }

    std::vector<double> apply(std::span<const double> x) const {
        if (x.size() != mean.size()) throw std::invalid_argument("Normalizer: width mismatch");
        std::vector<double> out(x.size());
        for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - mean[j]) / stdev[j];
        return out;
    }
};

enum class UqTarget { Y, Z };

struct UqNetConfig {
    int hidden_width = 128;
    int hidden_layers = 2;
    int batch = 128;
    double l2 = 0.0;
    std::vector<double> lr_stages{1e-3};
    std::vector<long> epoch_stages{100};
    std::uint64_t seed = 0;

    void validate(int output_dim) const {
        if (hidden_width <= output_dim)
            throw std::invalid_argument("UqNetConfig: hidden width must exceed the output dim");
        if (hidden_layers < 1) throw std::invalid_argument("UqNetConfig: need hidden layers");
        if (batch < 1) throw std::invalid_argument("UqNetConfig: batch must be positive");
        if (lr_stages.empty() || lr_stages.size() != epoch_stages.size())
            throw std::invalid_argument("UqNetConfig: lr/epoch stages length mismatch");
        for (double lr : lr_stages)
            if (!(lr > 0.0)) throw std::invalid_argument("UqNetConfig: rates must be positive");
        for (long ep : epoch_stages)
            if (ep < 1) throw std::invalid_argument("UqNetConfig: epochs must be positive");
    }
};

struct UqModel {
    MlpSpec spec;
    MlpParams params;
    Normalizer norm;
    UqTarget target = UqTarget::Y;
    int dim = 1; // 1 for Y, d for Z
    std::vector<double> train_nll; // per epoch (regularizer excluded)
    std::vector<double> valid_nll; // per epoch, eval mode
    bool diverged = false;
};

// Mean over the batch of log(sigma) + (y - mu)^2 / (2 sigma^2); the additive
// normalization constant is omitted.
inline double nll_y(std::span<const double> y, std::span<const double> mu,
                    std::span<const double> sigma) {
    if (y.size() != mu.size() || y.size() != sigma.size() || y.empty())
        throw std::invalid_argument("nll_y: size mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (!(sigma[i] > 0.0)) throw std::invalid_argument("nll_y: sigma must be positive");
        const double r = (y[i] - mu[i]) / sigma[i];
        sum += std::log(sigma[i]) + 0.5 * r * r;
    }
    return sum / static_cast<double>(y.size());
}

// Diagonal-covariance multivariate case; d = 1 reduces exactly to nll_y.
inline double nll_z(const Matrix& z, const Matrix& mu, const Matrix& sigma) {
    if (!z.same_shape(mu) || !z.same_shape(sigma) || z.rows == 0)
        throw std::invalid_argument("nll_z: shape mismatch");
    double sum = 0.0;
    for (std::size_t k = 0; k < z.data.size(); ++k) {
        if (!(sigma.data[k] > 0.0)) throw std::invalid_argument("nll_z: sigma must be positive");
        const double r = (z.data[k] - mu.data[k]) / sigma.data[k];
        sum += std::log(sigma.data[k]) + 0.5 * r * r;
    }
    return sum / static_cast<double>(z.rows);
}

namespace detail {

// NLL of a network output block [B x 2d] (means first, then STD head values)
// against targets [B x d]; fills the gradient w.r.t. the network outputs.
inline double nll_from_outputs(const Matrix& targets, const Matrix& out, Matrix* grad) {
    const std::size_t b = targets.rows;
    const std::size_t d = targets.cols;
    if (out.rows != b || out.cols != 2 * d)
        throw std::invalid_argument("nll_from_outputs: shape mismatch");
    if (grad) grad->assign(b, 2 * d);
    double sum = 0.0;
    const double inv_b = 1.0 / static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i) {
        const double* orow = out.row_ptr(i);
        const double* trow = targets.row_ptr(i);
        for (std::size_t k = 0; k < d; ++k) {
            const double mu = orow[k];
            const double sigma = orow[d + k] + kSigmaFloor;
            const double r = (trow[k] - mu) / sigma;
            sum += std::log(sigma) + 0.5 * r * r;
            if (grad) {
                double* grow = grad->row_ptr(i);
                grow[k] = inv_b * (mu - trow[k]) / (sigma * sigma);
                grow[d + k] = inv_b * (1.0 / sigma - r * r / sigma);
            }
        }
    }
    return sum * inv_b;
}

inline Matrix gather_rows(const Matrix& src, const std::vector<std::size_t>& idx) {
    Matrix out(idx.size(), src.cols);
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < src.cols; ++j) out(i, j) = src(idx[i], j);
    return out;
}

} // namespace detail

struct UqDataView {
    Matrix features; // [R x n]
    Matrix targets;  // [R x d']
};

inline UqDataView extract_view(const UqDataset& ds, UqTarget target) {
    if (ds.records.empty()) throw std::invalid_argument("extract_view: empty dataset");
    const std::size_t n_feat = ds.records.front().x.size();
    const std::size_t d = target == UqTarget::Y ? 1 : ds.records.front().z.size();
    UqDataView view;
    view.features.assign(ds.records.size(), n_feat);
    view.targets.assign(ds.records.size(), d);
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        const auto& rec = ds.records[i];
        for (std::size_t j = 0; j < n_feat; ++j) view.features(i, j) = rec.x[j];
        if (target == UqTarget::Y) {
            view.targets(i, 0) = rec.y;
        } else {
            for (std::size_t k = 0; k < d; ++k) view.targets(i, k) = rec.z[k];
        }
    }
    return view;
}

// Mini-batch Adam over the staged schedule; inputs are normalized with
// training statistics, targets stay raw. Deterministic given config.seed.
inline UqModel train_uq(const UqDataset& ds, UqTarget target, const UqNetConfig& cfg) {
    if (!ds.has_split()) throw std::invalid_argument("train_uq: dataset has no split");
    UqDataView view = extract_view(ds, target);
    for (double v : view.targets.data)
        if (!std::isfinite(v)) throw std::invalid_argument("train_uq: non-finite target");

    const int d_out = static_cast<int>(view.targets.cols);
    cfg.validate(2 * d_out);

    UqModel model;
    model.target = target;
    model.dim = d_out;
    model.spec.input_dim = static_cast<int>(view.features.cols);
    model.spec.output_dim = 2 * d_out;
    model.spec.hidden_layers = cfg.hidden_layers;
    model.spec.hidden_width = cfg.hidden_width;
    model.spec.hidden_activation = Activation::ReLU;
    model.spec.batch_norm = false;
    model.spec.output_transform.assign(static_cast<std::size_t>(d_out),
                                       OutputTransform::Identity);
    model.spec.output_transform.insert(model.spec.output_transform.end(),
                                       static_cast<std::size_t>(d_out),
                                       OutputTransform::Softplus);

    Matrix train_x = detail::gather_rows(view.features, ds.train_idx);
    const Matrix train_t = detail::gather_rows(view.targets, ds.train_idx);
    model.norm = Normalizer::fit(train_x);
    model.norm.apply(train_x);
    Matrix valid_x = detail::gather_rows(view.features, ds.valid_idx);
    const Matrix valid_t = detail::gather_rows(view.targets, ds.valid_idx);
    if (valid_x.rows > 0) model.norm.apply(valid_x);

    model.params = init_xavier_normal(model.spec, derive_seed(cfg.seed, seed_salt::kModelInit));
    std::vector<double*> pptr;
    collect_trainable(model.params, pptr);
    AdamState adam;
    adam.reset(pptr.size());

    const std::size_t m_train = train_x.rows;
    std::vector<std::size_t> order(m_train);
    std::iota(order.begin(), order.end(), std::size_t{0});

    MlpCache cache;
    MlpGrads grads = make_zero_grads(model.spec);
    Matrix batch_x, batch_t, out, dout;
    long epoch_counter = 0;
    for (std::size_t stage = 0; stage < cfg.lr_stages.size() && !model.diverged; ++stage) {
        const double lr = cfg.lr_stages[stage];
        for (long ep = 0; ep < cfg.epoch_stages[stage] && !model.diverged; ++ep) {
            ++epoch_counter;
            Rng shuffle_rng(derive_seed(cfg.seed, seed_salt::kEpoch,
                                        static_cast<std::uint64_t>(epoch_counter)));
            for (std::size_t i = m_train; i > 1; --i) {
                const std::size_t j = static_cast<std::size_t>(shuffle_rng.next_u64() % i);
                std::swap(order[i - 1], order[j]);
            }
            double epoch_nll = 0.0;
            std::size_t batches = 0;
            for (std::size_t start = 0; start < m_train;
                 start += static_cast<std::size_t>(cfg.batch)) {
                const std::size_t stop =
                    std::min(m_train, start + static_cast<std::size_t>(cfg.batch));
                const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                   order.begin() + static_cast<std::ptrdiff_t>(stop));
                batch_x = detail::gather_rows(train_x, idx);
                batch_t = detail::gather_rows(train_t, idx);
                out = forward(model.spec, model.params, batch_x, ForwardMode::Train, &cache);
                const double nll = detail::nll_from_outputs(batch_t, out, &dout);
                if (!std::isfinite(nll)) {
                    model.diverged = true;
                    break;
                }
                for (auto& g : grads.weights) g.fill(0.0);
                for (auto& g : grads.biases) std::fill(g.begin(), g.end(), 0.0);
                backward(model.spec, model.params, cache, dout, grads);
                apply_weight_decay(model.params, grads, cfg.l2);
                std::vector<const double*> gptr;
                collect_grads(grads, gptr);
                try {
                    adam_step_flat(pptr, gptr, adam, lr);
                } catch (const TrainingDiverged&) {
                    model.diverged = true;
                    break;
                }
                model.params.version += 1;
                epoch_nll += nll;
                ++batches;
            }
            if (batches > 0) model.train_nll.push_back(epoch_nll / static_cast<double>(batches));
            if (!model.diverged && valid_x.rows > 0) {
                const Matrix vout = forward_eval(model.spec, model.params, valid_x);
                model.valid_nll.push_back(detail::nll_from_outputs(valid_t, vout, nullptr));
            }
        }
    }
    return model;
}

// Normalize, eval-mode forward, split heads; the STD output carries the same
// floor used during training and is strictly positive.
inline std::pair<std::vector<double>, std::vector<double>> predict(const UqModel& model,
                                                                   std::span<const double> x) {
    const std::vector<double> nx = model.norm.apply(x);
    Matrix row(1, nx.size());
    for (std::size_t j = 0; j < nx.size(); ++j) row(0, j) = nx[j];
    const Matrix out = forward_eval(model.spec, model.params, row);
    const auto d = static_cast<std::size_t>(model.dim);
    std::vector<double> mu(d), sigma(d);
    for (std::size_t k = 0; k < d; ++k) {
        mu[k] = out(0, k);
        sigma[k] = out(0, d + k) + kSigmaFloor;
    }
    return {mu, sigma};
}

// Batched variant for evaluation loops.
inline void predict_rows(const UqModel& model, const Matrix& features, Matrix& mu, Matrix& sigma) {
    Matrix x = features;
    model.norm.apply(x);
    const Matrix out = forward_eval(model.spec, model.params, x);
    const auto d = static_cast<std::size_t>(model.dim);
    mu.assign(x.rows, d);
    sigma.assign(x.rows, d);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t k = 0; k < d; ++k) {
            mu(i, k) = out(i, k);
            sigma(i, k) = out(i, d + k) + kSigmaFloor;
        }
}

// R trainings with derived seeds; model 0 uses the configured seed itself.
inline std::vector<UqModel> ensemble_of_models(const UqDataset& ds, UqTarget target,
                                               const UqNetConfig& cfg, int r_models,
                                               int workers = 1) {
    if (r_models < 1) throw std::invalid_argument("ensemble_of_models: R must be >= 1");
    std::vector<UqModel> models(static_cast<std::size_t>(r_models));
    parallel_for(static_cast<std::size_t>(r_models), workers, [&](std::size_t i) {
        UqNetConfig run_cfg = cfg;
        if (i > 0) run_cfg.seed = derive_seed(cfg.seed, seed_salt::kUqModel, i);
        models[i] = train_uq(ds, target, run_cfg);
    });
    return models;
}

inline void save_uq_model(const UqModel& model, const std::string& path) {
    nlohmann::json j;
    j["spec"] = to_json(model.spec);
    j["params"] = to_json(model.params);
    j["normalizer"] = {{"mean", model.norm.mean}, {"stdev", model.norm.stdev}};
    j["target"] = model.target == UqTarget::Y ? "y" : "z";
    j["dim"] = model.dim;
    j["train_nll"] = model.train_nll;
    j["valid_nll"] = model.valid_nll;
    j["diverged"] = model.diverged;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write model: " + path);
    out << j.dump(2) << "\n";
}

inline UqModel load_uq_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read model: " + path);
    nlohmann::json j;
    in >> j;
    UqModel model;
    model.spec = spec_from_json(j.at("spec"));
    model.params = params_from_json(j.at("params"));
    model.norm.mean = j.at("normalizer").at("mean").get<std::vector<double>>();
    model.norm.stdev = j.at("normalizer").at("stdev").get<std::vector<double>>();
    model.target = j.at("target").get<std::string>() == "z" ? UqTarget::Z : UqTarget::Y;
    model.dim = j.at("dim").get<int>();
    model.train_nll = j.at("train_nll").get<std::vector<double>>();
    model.valid_nll = j.at("valid_nll").get<std::vector<double>>();
    model.diverged = j.at("diverged").get<bool>();
    return model;
}

} // namespace bsdeuq
