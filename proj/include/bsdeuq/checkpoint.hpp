#pragma once

#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "bsdeuq/nn.hpp"

// JSON parameter checkpoints: spec, all tensors in row-major order, optional
// Adam state and step counter. Doubles are serialized with a round-trip exact
// encoding, so the tensors survive save/load bit-for-bit.

namespace bsdeuq {

inline std::string to_string(Activation a) {
    switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Sin: return "sin";
    }
    return "relu";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::ReLU;
    if (s == "tanh") return Activation::Tanh;
    if (s == "sin") return Activation::Sin;
    throw std::invalid_argument("unknown activation: " + s);
}

inline nlohmann::json to_json(const MlpSpec& spec) {
    nlohmann::json j;
    j["input_dim"] = spec.input_dim;
    j["output_dim"] = spec.output_dim;
    j["hidden_layers"] = spec.hidden_layers;
    j["hidden_width"] = spec.hidden_width;
    j["activation"] = to_string(spec.hidden_activation);
    j["batch_norm"] = spec.batch_norm;
    auto transforms = nlohmann::json::array();
    for (int k = 0; k < spec.output_dim; ++k)
        transforms.push_back(spec.transform_of(k) == OutputTransform::Softplus ? "softplus"
                                                                               : "identity");
    j["output_transform"] = transforms;
    return j;
}

inline MlpSpec spec_from_json(const nlohmann::json& j) {
    MlpSpec spec;
    spec.input_dim = j.at("input_dim").get<int>();
    spec.output_dim = j.at("output_dim").get<int>();
    spec.hidden_layers = j.at("hidden_layers").get<int>();
    spec.hidden_width = j.at("hidden_width").get<int>();
    spec.hidden_activation = activation_from_string(j.at("activation").get<std::string>());
    spec.batch_norm = j.at("batch_norm").get<bool>();
    spec.output_transform.clear();
    for (const auto& t : j.at("output_transform"))
        spec.output_transform.push_back(t.get<std::string>() == "softplus"
                                            ? OutputTransform::Softplus
                                            : OutputTransform::Identity);
    spec.validate();
    return spec;
}

inline nlohmann::json to_json(const MlpParams& params) {
    nlohmann::json j;
    auto layers = nlohmann::json::array();
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        nlohmann::json layer;
        layer["rows"] = params.weights[l].rows;
        layer["cols"] = params.weights[l].cols;
        layer["weight"] = params.weights[l].data;
        layer["bias"] = params.biases[l];
        layers.push_back(std::move(layer));
    }
    j["layers"] = std::move(layers);
    auto bn = nlohmann::json::array();
    for (const auto& layer : params.bn) {
        nlohmann::json b;
        b["gamma"] = layer.gamma;
        b["beta"] = layer.beta;
        b["running_mean"] = layer.running_mean;
        b["running_var"] = layer.running_var;
        bn.push_back(std::move(b));
    }
    j["batch_norm"] = std::move(bn);
    return j;
}

inline MlpParams params_from_json(const nlohmann::json& j) {
    MlpParams p;
    for (const auto& layer : j.at("layers")) {
        Matrix w;
        w.rows = layer.at("rows").get<std::size_t>();
        w.cols = layer.at("cols").get<std::size_t>();
        w.data = layer.at("weight").get<std::vector<double>>();
        if (w.data.size() != w.rows * w.cols)
            throw std::invalid_argument("checkpoint: weight tensor size mismatch");
        p.weights.push_back(std::move(w));
        p.biases.push_back(layer.at("bias").get<std::vector<double>>());
    }
    for (const auto& b : j.at("batch_norm")) {
        BatchNormLayer layer;
        layer.gamma = b.at("gamma").get<std::vector<double>>();
        layer.beta = b.at("beta").get<std::vector<double>>();
        layer.running_mean = b.at("running_mean").get<std::vector<double>>();
        layer.running_var = b.at("running_var").get<std::vector<double>>();
        p.bn.push_back(std::move(layer));
    }
    return p;
}

inline nlohmann::json to_json(const AdamState& state) {
    nlohmann::json j;
    j["m"] = state.m;
    j["v"] = state.v;
    j["step"] = state.step;
    j["beta1"] = state.beta1;
    j["beta2"] = state.beta2;
    j["eps"] = state.eps;
    return j;
}

inline AdamState adam_from_json(const nlohmann::json& j) {
    AdamState s;
    s.m = j.at("m").get<std::vector<double>>();
    s.v = j.at("v").get<std::vector<double>>();
    s.step = j.at("step").get<long>();
    s.beta1 = j.at("beta1").get<double>();
    s.beta2 = j.at("beta2").get<double>();
    s.eps = j.at("eps").get<double>();
    return s;
}

struct Checkpoint {
    MlpSpec spec;
    MlpParams params;
    AdamState adam;
    long step = 0;
};

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    nlohmann::json j;
    j["spec"] = to_json(ckpt.spec);
    j["params"] = to_json(ckpt.params);
    j["adam"] = to_json(ckpt.adam);
    j["step"] = ckpt.step;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out << j.dump(2) << "\n";
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
    nlohmann::json j;
    in >> j;
    Checkpoint ckpt;
    ckpt.spec = spec_from_json(j.at("spec"));
    ckpt.params = params_from_json(j.at("params"));
    ckpt.adam = adam_from_json(j.at("adam"));
    ckpt.step = j.at("step").get<long>();
    return ckpt;
}

} // namespace bsdeuq
