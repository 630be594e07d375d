#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fassl/dataset.hpp"
#include "fassl/graph.hpp"
#include "fassl/prototype_stage.hpp"

// Linear-probe evaluation on frozen features, group-wise accuracy reporting,
// few-shot subsetting, prototype-frequency diagnostics and embedding export.

namespace fassl::eval {

struct GroupMetrics {
    double acc_all = 0.0;  // mean of the three group accuracies
    double acc_frequent = 0.0, acc_medium = 0.0, acc_rare = 0.0;
    double std_groups = 0.0;   // population std over the three group accuracies
    double acc_overall = 0.0;  // plain per-sample accuracy, reported alongside
};

struct LinearProbe {
    std::size_t num_classes = 0, dim = 0;
    std::vector<double> w;  // C x D row-major
    std::vector<double> b;  // C

    std::vector<double> epoch_ce;  // training cross-entropy per epoch
    double lr_used = 0.0;
    int retries = 0;                             // step-halving restarts
    std::vector<std::uint32_t> missing_classes;  // absent from train_idx
};

struct ProtoDistribution {
    std::vector<std::size_t> per_class_counts;
    double pct_frequent = 0.0, pct_medium = 0.0, pct_rare = 0.0;
    std::vector<long> nearest_sample;  // per prototype; -1 when unassigned
    std::size_t unassigned = 0;
};

// Row i = encoder output for the raw (un-augmented) sample i. Never touches
// the projection head or the labels.
std::vector<double> extract_features(const graph::ParamSet& encoder, const std::string& prefix,
                                     const data::Dataset& ds);

// Reads every label once (the eval stage is where label access is allowed).
std::vector<std::uint32_t> read_labels(const data::Dataset& ds);

// Multinomial logistic regression on frozen features, full-batch gradient
// descent from a zero initialization. If the cross-entropy curve ever rises
// by more than 1e-6 the attempt is restarted with the step halved.
LinearProbe train_linear_probe(const std::vector<double>& features, std::size_t n, std::size_t d,
                               const std::vector<std::uint32_t>& labels,
                               const std::vector<std::size_t>& train_idx, std::size_t num_classes,
                               std::size_t epochs, double lr);

std::vector<std::uint32_t> probe_predict(const LinearProbe& probe, const std::vector<double>& features,
                                         std::size_t n);

// Group accuracy is the macro average over the classes of the group (classes
// with an empty test pool are skipped; a fully empty group is an error).
GroupMetrics group_metrics(const std::vector<std::uint32_t>& predictions,
                           const std::vector<std::uint32_t>& labels,
                           const std::vector<data::Group>& group_of_class);

// Stratified per-class sample of round(fraction * n_c) indices, minimum one
// per class; deterministic per seed.
std::vector<std::size_t> few_shot_subset(const std::vector<std::uint32_t>& labels, double fraction,
                                         std::uint64_t seed, std::size_t num_classes);

// Each prototype retrieves its nearest sample by cosine similarity in the
// given feature space (ties to the lowest index); the sample's class/group
// counts toward the distribution. Zero-norm prototypes land in `unassigned`.
ProtoDistribution prototype_class_distribution(const proto::PrototypeBank& bank,
                                               const data::Dataset& ds,
                                               const std::vector<double>& features);

// CSV with header f0,...,f{D-1},label and nine significant digits.
void export_embeddings(const std::vector<double>& features, std::size_t n, std::size_t d,
                       const std::vector<std::uint32_t>& labels, const std::string& path);

}  // namespace fassl::eval
