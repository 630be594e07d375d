#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fassl/dataset.hpp"
#include "fassl/encoder.hpp"
#include "fassl/graph.hpp"
#include "fassl/metrics.hpp"
#include "fassl/prototype_stage.hpp"

// Stage 2: prototypical re-balanced self-supervised learning. Each sample is
// weighted by its rarity w.r.t. the frozen prototype bank, the student is
// trained to match the teacher's (stop-gradient) features under a weighted
// consistency loss, and the teacher tracks the student by EMA.

namespace fassl::rebalance {

struct RebalanceConfig {
    double tau = 0.99;  // teacher EMA decay
    double lr = 0.05;   // student learning rate (gamma)
    double momentum = 0.9;
    std::size_t batch_size = 32;
    std::size_t epochs = 30;
    std::uint64_t seed = 0;
    double clip_quantile = 0.95;   // per-batch upper clip, in (0.5, 1]
    bool uniform_weights = false;  // BYOL-style ablation: phi == 1

    void validate() const;
};

// phi = exp(-sum_k <z, p_k>), the exponent clamped to +-700 (clamps are
// counted into *overflow_count when given). Treated as a constant in all
// gradients.
double rarity_weight(std::span<const double> z, const proto::PrototypeBank& bank,
                     std::uint64_t* overflow_count = nullptr);

// Clip above at the linear-interpolated q-quantile of the batch, then divide
// by the post-clip mean so the output mean is exactly 1.
std::vector<double> clip_normalize_weights(const std::vector<double>& weights, double q);

// || a/||a|| - b/||b|| ||^2 = 2 - 2 cos(a, b); range [0, 4].
double consistency_loss(std::span<const double> a, std::span<const double> b);

// One training sample as seen by a Stage 2 step: two independent augmented
// views, one for each side of the consistency pair.
struct BatchTerm {
    std::vector<double> student_view;
    std::vector<double> teacher_view;
};

// L_reb = (1/B) sum_i w_i * L_consis(student(x'_i), teacher(x_i)) with
// w = clip_normalize(phi). Teacher features and weights are constants; only
// the student receives gradients. The same builder drives the training loop.
double rebalanced_loss(const graph::ParamSet& student, const graph::ParamSet& teacher,
                       const proto::PrototypeBank& bank, const std::vector<BatchTerm>& batch,
                       double clip_quantile, bool uniform_weights,
                       std::uint64_t* overflow_count = nullptr);

struct RebalanceResult {
    graph::ParamSet student;  // "enc.*" + "head.*"
    graph::ParamSet teacher;  // "enc.*", EMA-tracked
    StageMetrics metrics;
};

// The student starts as a copy of the teacher encoder plus a fresh
// He-initialized head (or continues from *student_warm when given, used by
// the alternate-training ablation). Per step: student SGD on the weighted
// consistency loss, then the teacher EMA update. The bank is never modified.
RebalanceResult train_rebalance_stage(const data::UnlabeledView& data, const data::AugmentConfig& aug,
                                      const RebalanceConfig& cfg, graph::ParamSet teacher,
                                      const proto::PrototypeBank& bank,
                                      const nn::EncoderConfig& head_cfg,
                                      const graph::ParamSet* student_warm = nullptr);

}  // namespace fassl::rebalance
