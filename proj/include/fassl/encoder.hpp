#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fassl/graph.hpp"

// MLP encoders for the teacher/student pair. Parameters live in a ParamSet
// under "<prefix>.W<i>" / "<prefix>.b<i>"; layer structure is recovered from
// the names, so the same ParamSet drives the plain forward, the tape builder
// and the checkpoint writer.

namespace fassl::nn {

struct EncoderConfig {
    // first entry = input dim, last = feature dim; relu between layers,
    // identity at the output
    std::vector<std::size_t> dims;

    void validate() const;
};

// He initialization: W ~ N(0, 2/fan_in), biases zero. Deterministic per seed.
graph::ParamSet init_mlp(const EncoderConfig& cfg, const std::string& prefix, std::uint64_t seed);
void append_mlp(graph::ParamSet& into, const EncoderConfig& cfg, const std::string& prefix,
                std::uint64_t seed);

std::size_t mlp_layer_count(const graph::ParamSet& params, const std::string& prefix);
std::size_t mlp_output_dim(const graph::ParamSet& params, const std::string& prefix);

// Plain feed-forward evaluation (no tape), kernels-backed.
std::vector<double> mlp_forward(const graph::ParamSet& params, const std::string& prefix,
                                std::span<const double> x);

// Emits the same network onto a tape; returns the output node.
graph::NodeId build_mlp(graph::Tape& tape, const graph::ParamSet& params, const std::string& prefix,
                        graph::NodeId input);

// theta_T' = tau*theta_T + (1-tau)*theta_S over the arrays present in
// `teacher` (student-only arrays, i.e. the projection head, are excluded).
// tau=0 copies the student, tau=1 leaves the teacher untouched.
void ema_update(graph::ParamSet& teacher, const graph::ParamSet& student, double tau);

// Arrays whose names start with `prefix` copied into a fresh set.
graph::ParamSet subset_by_prefix(const graph::ParamSet& params, const std::string& prefix);

}  // namespace fassl::nn
