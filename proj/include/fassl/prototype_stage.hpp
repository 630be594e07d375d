#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fassl/dataset.hpp"
#include "fassl/graph.hpp"
#include "fassl/metrics.hpp"

// Stage 1: frequency-aware prototype learning. A bank of K prototypes is
// trained jointly with the teacher encoder using a contrastive loss over
// similarity-score distributions h = P*z, so the bank drifts toward the
// dominant classes of a long-tailed input stream.

namespace fassl::proto {

struct PrototypeBank {
    std::size_t k = 0, d = 0;
    std::vector<double> p;  // row-major K x D

    std::span<const double> row(std::size_t i) const { return {p.data() + i * d, d}; }
};

// Entries ~ N(0, 1/D), deterministic per seed.
PrototypeBank init_prototypes(std::size_t k, std::size_t d, std::uint64_t seed);

// h = P * z.
std::vector<double> similarity_scores(const PrototypeBank& bank, std::span<const double> z);

// Bank <-> ParamSet bridge (array "proto.P", shape {K, D}); the bank is a
// regular trainable array during Stage 1 and shares the checkpoint format.
graph::ParamSet bank_to_params(const PrototypeBank& bank);
PrototypeBank bank_from_params(const graph::ParamSet& params);

// NT-Xent over score rows ordered (h_1, h'_1, ..., h_B, h'_B): anchor a pairs
// with a^1; the denominator runs over all other 2B-1 rows with the positive
// included; sim is cosine similarity on the raw scores. Returns the mean over
// all 2B anchors.
graph::NodeId build_contrastive_loss(graph::Tape& tape, const std::vector<graph::NodeId>& score_rows,
                                     double beta);

// Value-level evaluation of the same loss for given score rows.
double contrastive_loss(const std::vector<std::vector<double>>& score_rows, double beta);

struct ProtoStageConfig {
    std::size_t k = 128;
    double beta = 0.2;
    std::size_t batch_size = 32;
    std::size_t epochs = 30;
    double lr = 0.05;
    double momentum = 0.9;
    std::uint64_t seed = 0;

    void validate() const;
};

struct ProtoStageResult {
    graph::ParamSet teacher;  // "enc.*"
    PrototypeBank bank;
    StageMetrics metrics;
};

// Joint SGD over teacher and bank. Batches whose loss hits a numeric error
// (zero-norm score row) are skipped and counted; a loss that stays above ten
// times the first epoch's for three consecutive epochs raises
// DivergenceError. With epochs=0 the inputs are returned unchanged.
ProtoStageResult train_prototype_stage(const data::UnlabeledView& data, const data::AugmentConfig& aug,
                                       const ProtoStageConfig& cfg, graph::ParamSet teacher_init,
                                       PrototypeBank bank_init);

}  // namespace fassl::proto
