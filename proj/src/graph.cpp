#include "fassl/graph.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "fassl/errors.hpp"
#include "fassl/kernels.hpp"

namespace fassl::graph {

namespace {
constexpr double kNormGuard = 1e-12;

std::size_t shape_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}
}  // namespace

// ---------------------------------------------------------------------------
// ParamSet

void ParamSet::add(const std::string& name, std::vector<std::size_t> shape, std::vector<double> data) {
    if (arrays_.count(name)) throw ContractError("duplicate parameter name: " + name);
    if (shape_size(shape) != data.size()) {
        throw ContractError("shape/data size mismatch for parameter: " + name);
    }
    arrays_.emplace(name, Array{std::move(shape), std::move(data)});
}

void ParamSet::add_zeros(const std::string& name, std::vector<std::size_t> shape) {
    std::vector<double> data(shape_size(shape), 0.0);
    add(name, std::move(shape), std::move(data));
}

const Array& ParamSet::at(const std::string& name) const {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
}

std::vector<double>& ParamSet::data(const std::string& name) {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw ContractError("unknown parameter: " + name);
    return it->second.data;
}

std::size_t ParamSet::total_size() const {
    std::size_t n = 0;
    for (const auto& [name, arr] : arrays_) n += arr.size();
    return n;
}

// ---------------------------------------------------------------------------
// Tape construction

const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::input: return "input";
        case OpKind::constant: return "constant";
        case OpKind::matvec: return "matvec";
        case OpKind::add: return "add";
        case OpKind::scalar_mul: return "scalar-mul";
        case OpKind::relu: return "relu";
        case OpKind::exp: return "exp";
        case OpKind::log: return "log";
        case OpKind::sum: return "sum";
        case OpKind::l2_normalize: return "l2-normalize";
        case OpKind::inner_product: return "inner-product";
        case OpKind::cosine_similarity: return "cosine-similarity";
        case OpKind::squared_distance: return "squared-distance";
        case OpKind::log_sum_exp: return "log-sum-exp";
        case OpKind::pack: return "pack";
    }
    return "?";
}

NodeId Tape::push(Node n) {
    for (NodeId in : n.in) check(in);
    nodes_.push_back(std::move(n));
    output_ = static_cast<NodeId>(nodes_.size()) - 1;
    forward_done_ = false;
    return output_;
}

void Tape::check(NodeId id) const {
    if (id < 0 || id >= static_cast<NodeId>(nodes_.size())) {
        throw GraphError("node id out of range: " + std::to_string(id));
    }
}

NodeId Tape::param(const std::string& name) {
    auto it = param_nodes_.find(name);
    if (it != param_nodes_.end()) return it->second;
    Node n;
    n.kind = OpKind::input;
    n.name = name;
    NodeId id = push(std::move(n));
    param_nodes_[name] = id;
    return id;
}

NodeId Tape::constant(std::vector<double> value) {
    Node n;
    n.kind = OpKind::constant;
    n.value = std::move(value);
    return push(std::move(n));
}

NodeId Tape::matvec(NodeId w, std::size_t rows, std::size_t cols, NodeId x) {
    Node n;
    n.kind = OpKind::matvec;
    n.in = {w, x};
    n.rows = rows;
    n.cols = cols;
    return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
    Node n;
    n.kind = OpKind::add;
    n.in = {a, b};
    return push(std::move(n));
}

NodeId Tape::scalar_mul(double c, NodeId x) {
    Node n;
    n.kind = OpKind::scalar_mul;
    n.in = {x};
    n.c = c;
    return push(std::move(n));
}

NodeId Tape::relu(NodeId x) {
    Node n;
    n.kind = OpKind::relu;
    n.in = {x};
    return push(std::move(n));
}

NodeId Tape::exp(NodeId x) {
    Node n;
    n.kind = OpKind::exp;
    n.in = {x};
    return push(std::move(n));
}

NodeId Tape::log(NodeId x) {
    Node n;
    n.kind = OpKind::log;
    n.in = {x};
    return push(std::move(n));
}

NodeId Tape::sum(NodeId x) {
    Node n;
    n.kind = OpKind::sum;
    n.in = {x};
    return push(std::move(n));
}

NodeId Tape::l2_normalize(NodeId x) {
    Node n;
    n.kind = OpKind::l2_normalize;
    n.in = {x};
    return push(std::move(n));
}

NodeId Tape::inner_product(NodeId a, NodeId b) {
    Node n;
    n.kind = OpKind::inner_product;
    n.in = {a, b};
    return push(std::move(n));
}

NodeId Tape::cosine_similarity(NodeId a, NodeId b) {
    Node n;
    n.kind = OpKind::cosine_similarity;
    n.in = {a, b};
    return push(std::move(n));
}

NodeId Tape::squared_distance(NodeId a, NodeId b) {
    Node n;
    n.kind = OpKind::squared_distance;
    n.in = {a, b};
    return push(std::move(n));
}

NodeId Tape::log_sum_exp(NodeId x) {
    Node n;
    n.kind = OpKind::log_sum_exp;
    n.in = {x};
    return push(std::move(n));
}

NodeId Tape::pack(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw GraphError("pack needs at least one input");
    Node n;
    n.kind = OpKind::pack;
    n.in = parts;
    return push(std::move(n));
}

void Tape::set_output(NodeId id) {
    check(id);
    output_ = id;
}

NodeId Tape::output() const {
    if (output_ < 0) throw StateError("empty tape has no output");
    return output_;
}

// ---------------------------------------------------------------------------
// Forward

void Tape::eval_node(std::size_t i) {
    Node& n = nodes_[i];
    auto in_val = [&](std::size_t k) -> const std::vector<double>& { return nodes_[n.in[k]].value; };

    switch (n.kind) {
        case OpKind::input: {
            const Array& arr = bound_->at(n.name);
            n.value = arr.data;
            break;
        }
        case OpKind::constant:
            break;
        case OpKind::matvec: {
            const auto& w = in_val(0);
            const auto& x = in_val(1);
            if (w.size() != n.rows * n.cols || x.size() != n.cols) {
                throw GraphError("matvec shape mismatch at node " + std::to_string(i));
            }
            n.value.assign(n.rows, 0.0);
            kern::gemv(w.data(), n.rows, n.cols, x.data(), n.value.data());
            break;
        }
        case OpKind::add: {
            const auto& a = in_val(0);
            const auto& b = in_val(1);
            if (a.size() != b.size()) throw GraphError("add shape mismatch at node " + std::to_string(i));
            n.value.resize(a.size());
            kern::vadd(a.data(), b.data(), n.value.data(), a.size());
            break;
        }
        case OpKind::scalar_mul: {
            n.value = in_val(0);
            kern::scale(n.c, n.value.data(), n.value.size());
            break;
        }
        case OpKind::relu: {
            const auto& x = in_val(0);
            n.value.resize(x.size());
            kern::relu(x.data(), n.value.data(), x.size());
            break;
        }
        case OpKind::exp: {
            const auto& x = in_val(0);
            n.value.resize(x.size());
            for (std::size_t k = 0; k < x.size(); ++k) n.value[k] = std::exp(x[k]);
            break;
        }
        case OpKind::log: {
            const auto& x = in_val(0);
            n.value.resize(x.size());
            for (std::size_t k = 0; k < x.size(); ++k) n.value[k] = std::log(x[k]);
            break;
        }
        case OpKind::sum: {
            const auto& x = in_val(0);
            n.value = {kern::sum(x.data(), x.size())};
            break;
        }
        case OpKind::l2_normalize: {
            const auto& x = in_val(0);
            double norm = std::sqrt(kern::sumsq(x.data(), x.size()));
            n.aux = norm;
            n.value.assign(x.size(), 0.0);
            if (norm < kNormGuard) {
                ++collapse_warnings_;
            } else {
                n.value = x;
                kern::scale(1.0 / norm, n.value.data(), n.value.size());
            }
            break;
        }
        case OpKind::inner_product: {
            const auto& a = in_val(0);
            const auto& b = in_val(1);
            if (a.size() != b.size()) {
                throw GraphError("inner-product shape mismatch at node " + std::to_string(i));
            }
            n.value = {kern::dot(a.data(), b.data(), a.size())};
            break;
        }
        case OpKind::cosine_similarity: {
            const auto& a = in_val(0);
            const auto& b = in_val(1);
            if (a.size() != b.size()) {
                throw GraphError("cosine-similarity shape mismatch at node " + std::to_string(i));
            }
            double na = std::sqrt(kern::sumsq(a.data(), a.size()));
            double nb = std::sqrt(kern::sumsq(b.data(), b.size()));
            if (na < kNormGuard || nb < kNormGuard) {
                throw NumericError("cosine-similarity of zero-norm vector at node " + std::to_string(i));
            }
            n.value = {kern::dot(a.data(), b.data(), a.size()) / (na * nb)};
            break;
        }
        case OpKind::squared_distance: {
            const auto& a = in_val(0);
            const auto& b = in_val(1);
            if (a.size() != b.size()) {
                throw GraphError("squared-distance shape mismatch at node " + std::to_string(i));
            }
            std::vector<double> diff(a.size());
            kern::vsub(a.data(), b.data(), diff.data(), a.size());
            n.value = {kern::sumsq(diff.data(), diff.size())};
            break;
        }
        case OpKind::log_sum_exp: {
            const auto& x = in_val(0);
            if (x.empty()) throw GraphError("log-sum-exp of empty vector at node " + std::to_string(i));
            double m = x[0];
            for (double v : x) m = std::max(m, v);
            double s = 0.0;
            for (double v : x) s += std::exp(v - m);
            n.value = {m + std::log(s)};
            break;
        }
        case OpKind::pack: {
            std::size_t total = 0;
            for (NodeId id : n.in) total += nodes_[id].value.size();
            n.value.clear();
            n.value.reserve(total);
            for (NodeId id : n.in) {
                const auto& v = nodes_[id].value;
                n.value.insert(n.value.end(), v.begin(), v.end());
            }
            break;
        }
    }

    for (double v : n.value) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("non-finite value at node ") + std::to_string(i) + " (" +
                               op_name(n.kind) + ")");
        }
    }
}

const std::vector<double>& Tape::forward(const ParamSet& params) {
    if (nodes_.empty()) throw StateError("forward on empty tape");
    bound_ = &params;
    collapse_warnings_ = 0;
    for (std::size_t i = 0; i < nodes_.size(); ++i) eval_node(i);
    forward_done_ = true;
    return nodes_[output_].value;
}

// ---------------------------------------------------------------------------
// Backward

GradMap Tape::backward(double seed_grad) {
    if (!forward_done_) throw StateError("backward called before forward");

    std::vector<std::vector<double>> grads(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) grads[i].assign(nodes_[i].value.size(), 0.0);
    for (double& g : grads[output_]) g = seed_grad;

    for (std::size_t idx = nodes_.size(); idx-- > 0;) {
        const Node& n = nodes_[idx];
        const std::vector<double>& g = grads[idx];
        auto in_val = [&](std::size_t k) -> const std::vector<double>& { return nodes_[n.in[k]].value; };
        auto in_grad = [&](std::size_t k) -> std::vector<double>& { return grads[n.in[k]]; };

        switch (n.kind) {
            case OpKind::input:
            case OpKind::constant:
                break;
            case OpKind::matvec: {
                const auto& x = in_val(1);
                const auto& w = in_val(0);
                kern::ger_acc(in_grad(0).data(), n.rows, n.cols, g.data(), x.data());
                kern::gemv_t_acc(w.data(), n.rows, n.cols, g.data(), in_grad(1).data());
                break;
            }
            case OpKind::add:
                kern::axpy(1.0, g.data(), in_grad(0).data(), g.size());
                kern::axpy(1.0, g.data(), in_grad(1).data(), g.size());
                break;
            case OpKind::scalar_mul:
                kern::axpy(n.c, g.data(), in_grad(0).data(), g.size());
                break;
            case OpKind::relu: {
                const auto& x = in_val(0);
                std::vector<double> gx(x.size());
                kern::relu_bwd(x.data(), g.data(), gx.data(), x.size());
                kern::axpy(1.0, gx.data(), in_grad(0).data(), x.size());
                break;
            }
            case OpKind::exp: {
                // dy/dx = y
                std::vector<double> gx(g.size());
                kern::vmul(g.data(), n.value.data(), gx.data(), g.size());
                kern::axpy(1.0, gx.data(), in_grad(0).data(), g.size());
                break;
            }
            case OpKind::log: {
                const auto& x = in_val(0);
                auto& gx = in_grad(0);
                for (std::size_t k = 0; k < x.size(); ++k) gx[k] += g[k] / x[k];
                break;
            }
            case OpKind::sum:
                for (double& gv : in_grad(0)) gv += g[0];
                break;
            case OpKind::l2_normalize: {
                // d(x/||x||) applied to upstream g: (g - y*(g.y)) / ||x||
                if (n.aux < kNormGuard) break;  // guarded: zero gradient
                double gy = kern::dot(g.data(), n.value.data(), g.size());
                std::vector<double> gx = g;
                kern::axpy(-gy, n.value.data(), gx.data(), gx.size());
                kern::axpy(1.0 / n.aux, gx.data(), in_grad(0).data(), gx.size());
                break;
            }
            case OpKind::inner_product: {
                const auto& a = in_val(0);
                const auto& b = in_val(1);
                kern::axpy(g[0], b.data(), in_grad(0).data(), a.size());
                kern::axpy(g[0], a.data(), in_grad(1).data(), a.size());
                break;
            }
            case OpKind::cosine_similarity: {
                const auto& a = in_val(0);
                const auto& b = in_val(1);
                double na = std::sqrt(kern::sumsq(a.data(), a.size()));
                double nb = std::sqrt(kern::sumsq(b.data(), b.size()));
                double s = n.value[0];
                // ds/da = b/(na*nb) - s*a/na^2, symmetric in b
                kern::axpy(g[0] / (na * nb), b.data(), in_grad(0).data(), a.size());
                kern::axpy(-g[0] * s / (na * na), a.data(), in_grad(0).data(), a.size());
                kern::axpy(g[0] / (na * nb), a.data(), in_grad(1).data(), b.size());
                kern::axpy(-g[0] * s / (nb * nb), b.data(), in_grad(1).data(), b.size());
                break;
            }
            case OpKind::squared_distance: {
                const auto& a = in_val(0);
                const auto& b = in_val(1);
                std::vector<double> diff(a.size());
                kern::vsub(a.data(), b.data(), diff.data(), a.size());
                kern::axpy(2.0 * g[0], diff.data(), in_grad(0).data(), a.size());
                kern::axpy(-2.0 * g[0], diff.data(), in_grad(1).data(), a.size());
                break;
            }
            case OpKind::log_sum_exp: {
                const auto& x = in_val(0);
                auto& gx = in_grad(0);
                double lse = n.value[0];
                for (std::size_t k = 0; k < x.size(); ++k) gx[k] += g[0] * std::exp(x[k] - lse);
                break;
            }
            case OpKind::pack: {
                std::size_t off = 0;
                for (NodeId id : n.in) {
                    auto& gin = grads[id];
                    kern::axpy(1.0, g.data() + off, gin.data(), gin.size());
                    off += gin.size();
                }
                break;
            }
        }
    }

    GradMap out;
    for (const auto& [name, arr] : *bound_) {
        auto it = param_nodes_.find(name);
        if (it != param_nodes_.end() && !grads[it->second].empty()) {
            out[name] = std::move(grads[it->second]);
        } else {
            out[name] = std::vector<double>(arr.size(), 0.0);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

double grad_check(Tape& tape, const ParamSet& params, double eps) {
    if (eps < 1e-7 || eps > 1e-3) throw ContractError("grad_check eps must be in [1e-7, 1e-3]");
    tape.forward(params);
    if (tape.value(tape.output()).size() != 1) {
        throw ContractError("grad_check requires a scalar tape output");
    }
    GradMap analytic = tape.backward();

    ParamSet work;
    for (const auto& [name, arr] : params) work.add(name, arr.shape, arr.data);

    double max_rel = 0.0;
    for (const auto& [name, arr] : params) {
        auto& data = work.data(name);
        const auto& ga = analytic.at(name);
        for (std::size_t i = 0; i < data.size(); ++i) {
            double saved = data[i];
            data[i] = saved + eps;
            double up = tape.forward(work)[0];
            data[i] = saved - eps;
            double down = tape.forward(work)[0];
            data[i] = saved;
            double fd = (up - down) / (2.0 * eps);
            double rel = std::abs(ga[i] - fd) / std::max(1e-12, std::abs(ga[i]) + std::abs(fd));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

const std::vector<double>& Tape::value(NodeId id) const {
    check(id);
    if (!forward_done_) throw StateError("value() before forward");
    return nodes_[id].value;
}

void SgdMomentum::step(ParamSet& params, const GradMap& grads) {
    for (auto& [name, arr] : params) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;
        const auto& g = git->second;
        if (g.size() != arr.data.size()) throw ContractError("gradient shape mismatch for " + name);
        auto& v = velocity_[name];
        if (v.empty()) v.assign(g.size(), 0.0);
        // v = mu*v + g; p -= lr*v
        kern::scale(mu_, v.data(), v.size());
        kern::axpy(1.0, g.data(), v.data(), v.size());
        kern::axpy(-lr_, v.data(), arr.data.data(), arr.data.size());
    }
}

}  // namespace fassl::graph
