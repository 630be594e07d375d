#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

// Minimal reverse-mode gradient engine over a fixed op set. A Tape records a
// DAG of vector-valued nodes (scalars are length-1 vectors); forward() caches
// every node value, backward() accumulates gradients into a per-parameter map.
// No broadcasting, no higher-order derivatives.

namespace fassl::graph {

using NodeId = int;
using GradMap = std::map<std::string, std::vector<double>>;

struct Array {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    std::size_t size() const { return data.size(); }
};

// Named trainable arrays. Names are unique, shapes immutable after add().
// Iteration order is the sorted name order, which keeps optimizer updates
// and checkpoint layouts deterministic.
class ParamSet {
public:
    void add(const std::string& name, std::vector<std::size_t> shape, std::vector<double> data);
    void add_zeros(const std::string& name, std::vector<std::size_t> shape);

    bool has(const std::string& name) const { return arrays_.count(name) != 0; }
    const Array& at(const std::string& name) const;
    std::vector<double>& data(const std::string& name);
    const std::vector<double>& cdata(const std::string& name) const { return at(name).data; }

    auto begin() const { return arrays_.begin(); }
    auto end() const { return arrays_.end(); }
    auto begin() { return arrays_.begin(); }
    auto end() { return arrays_.end(); }
    std::size_t count() const { return arrays_.size(); }
    std::size_t total_size() const;

private:
    std::map<std::string, Array> arrays_;
};

enum class OpKind {
    input,        // parameter leaf (bound by name at forward)
    constant,     // fixed data leaf
    matvec,       // y = W * x, W row-major rows x cols
    add,          // elementwise a + b
    scalar_mul,   // c * x, c a compile-time constant of the tape
    relu,
    exp,
    log,
    sum,          // reduce to scalar
    l2_normalize, // x / ||x||, guarded near zero
    inner_product,
    cosine_similarity,
    squared_distance,
    log_sum_exp,
    pack,         // concatenate node values into one vector
};

const char* op_name(OpKind k);

class Tape {
public:
    // --- graph construction -------------------------------------------------
    NodeId param(const std::string& name);
    NodeId constant(std::vector<double> value);
    NodeId matvec(NodeId w, std::size_t rows, std::size_t cols, NodeId x);
    NodeId add(NodeId a, NodeId b);
    NodeId scalar_mul(double c, NodeId x);
    NodeId relu(NodeId x);
    NodeId exp(NodeId x);
    NodeId log(NodeId x);
    NodeId sum(NodeId x);
    NodeId l2_normalize(NodeId x);
    NodeId inner_product(NodeId a, NodeId b);
    NodeId cosine_similarity(NodeId a, NodeId b);
    NodeId squared_distance(NodeId a, NodeId b);
    NodeId log_sum_exp(NodeId x);
    NodeId pack(const std::vector<NodeId>& parts);

    // Output defaults to the last node appended.
    void set_output(NodeId id);
    NodeId output() const;

    // --- execution -----------------------------------------------------------
    // Binds parameter leaves by name, evaluates every node in order, checks
    // all cached values are finite. Returns the output value.
    const std::vector<double>& forward(const ParamSet& params);

    // Gradients of the output w.r.t. every array in the bound ParamSet
    // (zero-filled for arrays not on any path). seed_grad is applied to every
    // coordinate of the output node.
    GradMap backward(double seed_grad = 1.0);

    const std::vector<double>& value(NodeId id) const;
    std::size_t node_count() const { return nodes_.size(); }

    // Times the l2_normalize guard fired (input norm below 1e-12) during the
    // most recent forward.
    int collapse_warnings() const { return collapse_warnings_; }

private:
    struct Node {
        OpKind kind;
        std::vector<NodeId> in;
        double c = 0.0;                  // scalar_mul constant
        std::size_t rows = 0, cols = 0;  // matvec dims
        std::string name;                // input leaf binding
        std::vector<double> value;
        double aux = 0.0;  // cached norm / lse value reused by backward
    };

    NodeId push(Node n);
    void check(NodeId id) const;
    void eval_node(std::size_t i);

    std::vector<Node> nodes_;
    std::map<std::string, NodeId> param_nodes_;
    NodeId output_ = -1;
    const ParamSet* bound_ = nullptr;
    bool forward_done_ = false;
    int collapse_warnings_ = 0;
};

// Max over all parameter coordinates of the relative disagreement between the
// analytic gradient and central finite differences with step eps. The tape
// output must be scalar and params 64-bit (the only mode this engine has).
double grad_check(Tape& tape, const ParamSet& params, double eps);

// Plain SGD with classical momentum: v = mu*v + g; p -= lr*v.
class SgdMomentum {
public:
    SgdMomentum(double lr, double momentum) : lr_(lr), mu_(momentum) {}

    void step(ParamSet& params, const GradMap& grads);

private:
    double lr_, mu_;
    std::map<std::string, std::vector<double>> velocity_;
};

}  // namespace fassl::graph
