#include "fassl/encoder.hpp"

#include <cmath>
#include <random>

#include "fassl/errors.hpp"
#include "fassl/kernels.hpp"
#include "fassl/rng.hpp"

namespace fassl::nn {

void EncoderConfig::validate() const {
    if (dims.size() < 2) throw SpecError("encoder needs at least input and output dims");
    for (std::size_t d : dims) {
        if (d == 0) throw SpecError("zero-width layer in encoder config");
    }
}

void append_mlp(graph::ParamSet& into, const EncoderConfig& cfg, const std::string& prefix,
                std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng = make_rng(seed);
    for (std::size_t l = 0; l + 1 < cfg.dims.size(); ++l) {
        const std::size_t fan_in = cfg.dims[l];
        const std::size_t fan_out = cfg.dims[l + 1];
        std::normal_distribution<double> he(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        std::vector<double> w(fan_out * fan_in);
        for (double& v : w) v = he(rng);
        into.add(prefix + ".W" + std::to_string(l), {fan_out, fan_in}, std::move(w));
        into.add_zeros(prefix + ".b" + std::to_string(l), {fan_out});
    }
}

graph::ParamSet init_mlp(const EncoderConfig& cfg, const std::string& prefix, std::uint64_t seed) {
    graph::ParamSet params;
    append_mlp(params, cfg, prefix, seed);
    return params;
}

std::size_t mlp_layer_count(const graph::ParamSet& params, const std::string& prefix) {
    std::size_t l = 0;
    while (params.has(prefix + ".W" + std::to_string(l))) ++l;
    if (l == 0) throw ContractError("no layers found under prefix: " + prefix);
    return l;
}

std::size_t mlp_output_dim(const graph::ParamSet& params, const std::string& prefix) {
    std::size_t layers = mlp_layer_count(params, prefix);
    return params.at(prefix + ".W" + std::to_string(layers - 1)).shape[0];
}

std::vector<double> mlp_forward(const graph::ParamSet& params, const std::string& prefix,
                                std::span<const double> x) {
    const std::size_t layers = mlp_layer_count(params, prefix);
    std::vector<double> act(x.begin(), x.end());
    for (std::size_t l = 0; l < layers; ++l) {
        const graph::Array& w = params.at(prefix + ".W" + std::to_string(l));
        const graph::Array& b = params.at(prefix + ".b" + std::to_string(l));
        const std::size_t rows = w.shape[0], cols = w.shape[1];
        if (act.size() != cols) throw GraphError("encoder input dim mismatch at layer " + std::to_string(l));
        std::vector<double> next(rows);
        kern::gemv(w.data.data(), rows, cols, act.data(), next.data());
        kern::vadd(next.data(), b.data.data(), next.data(), rows);
        if (l + 1 < layers) kern::relu(next.data(), next.data(), rows);
        act = std::move(next);
    }
    return act;
}

graph::NodeId build_mlp(graph::Tape& tape, const graph::ParamSet& params, const std::string& prefix,
                        graph::NodeId input) {
    const std::size_t layers = mlp_layer_count(params, prefix);
    graph::NodeId node = input;
    for (std::size_t l = 0; l < layers; ++l) {
        const std::string wname = prefix + ".W" + std::to_string(l);
        const graph::Array& w = params.at(wname);
        node = tape.matvec(tape.param(wname), w.shape[0], w.shape[1], node);
        node = tape.add(node, tape.param(prefix + ".b" + std::to_string(l)));
        if (l + 1 < layers) node = tape.relu(node);
    }
    return node;
}

void ema_update(graph::ParamSet& teacher, const graph::ParamSet& student, double tau) {
    if (!std::isfinite(tau) || tau < 0.0 || tau > 1.0) throw ContractError("tau must be in [0,1]");
    for (auto& [name, arr] : teacher) {
        const graph::Array& s = student.at(name);
        if (s.shape != arr.shape) throw ContractError("ema shape mismatch for " + name);
        if (tau == 1.0) continue;
        if (tau == 0.0) {
            arr.data = s.data;
            continue;
        }
        for (std::size_t i = 0; i < arr.data.size(); ++i) {
            arr.data[i] = tau * arr.data[i] + (1.0 - tau) * s.data[i];
        }
    }
}

graph::ParamSet subset_by_prefix(const graph::ParamSet& params, const std::string& prefix) {
    graph::ParamSet out;
    for (const auto& [name, arr] : params) {
        if (name.rfind(prefix, 0) == 0) out.add(name, arr.shape, arr.data);
    }
    return out;
}

}  // namespace fassl::nn
