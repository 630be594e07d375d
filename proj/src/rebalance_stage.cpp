#include "fassl/rebalance_stage.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "fassl/errors.hpp"
#include "fassl/kernels.hpp"
#include "fassl/rng.hpp"

namespace fassl::rebalance {

namespace {
constexpr double kExpClamp = 700.0;
constexpr double kNormGuard = 1e-12;
constexpr double kCollapseStd = 1e-6;
constexpr std::size_t kHistBins = 16;
}  // namespace

void RebalanceConfig::validate() const {
    if (!std::isfinite(tau) || tau < 0.0 || tau > 1.0) throw SpecError("tau must be in [0,1]");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw SpecError("learning rate must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw SpecError("momentum must be in [0,1)");
    if (batch_size < 1) throw SpecError("batch size must be >= 1");
    if (!(clip_quantile > 0.5) || clip_quantile > 1.0) throw SpecError("clip quantile must be in (0.5, 1]");
}

double rarity_weight(std::span<const double> z, const proto::PrototypeBank& bank,
                     std::uint64_t* overflow_count) {
    if (z.size() != bank.d) throw ContractError("feature dim does not match prototype dim");
    double s = 0.0;
    for (std::size_t k = 0; k < bank.k; ++k) {
        s += kern::dot(z.data(), bank.p.data() + k * bank.d, bank.d);
    }
    if (std::abs(s) > kExpClamp) {
        s = std::clamp(s, -kExpClamp, kExpClamp);
        if (overflow_count) ++*overflow_count;
    }
    return std::exp(-s);
}

std::vector<double> clip_normalize_weights(const std::vector<double>& weights, double q) {
    if (weights.empty()) throw ContractError("empty weight batch");
    if (!(q > 0.5) || q > 1.0) throw ContractError("clip quantile must be in (0.5, 1]");
    for (double w : weights) {
        if (!(w > 0.0) || !std::isfinite(w)) throw ContractError("weights must be positive and finite");
    }

    // linear-interpolated empirical quantile
    std::vector<double> sorted = weights;
    std::sort(sorted.begin(), sorted.end());
    const double h = q * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(h);
    const double frac = h - static_cast<double>(lo);
    const double cap =
        (lo + 1 < sorted.size()) ? sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]) : sorted[lo];

    std::vector<double> out(weights.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        out[i] = std::min(weights[i], cap);
        sum += out[i];
    }
    const double mean = sum / static_cast<double>(out.size());
    for (double& w : out) w /= mean;
    return out;
}

double consistency_loss(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ContractError("consistency loss dim mismatch");
    const double na = std::sqrt(kern::sumsq(a.data(), a.size()));
    const double nb = std::sqrt(kern::sumsq(b.data(), b.size()));
    if (na < kNormGuard || nb < kNormGuard) throw NumericError("consistency loss of zero-norm feature");
    double d2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] / na - b[i] / nb;
        d2 += diff * diff;
    }
    return d2;
}

namespace {

struct BatchGraph {
    graph::Tape tape;
    std::vector<graph::NodeId> feature_nodes;  // student encoder outputs
    std::vector<double> weights;
    std::uint64_t teacher_norm_guards = 0;
};

// Teacher targets and rarity weights are computed outside the tape, so no
// gradient can reach the teacher, the bank or the weights.
BatchGraph build_batch_graph(const graph::ParamSet& student, const graph::ParamSet& teacher,
                             const proto::PrototypeBank& bank, const std::vector<BatchTerm>& batch,
                             double clip_quantile, bool uniform_weights,
                             std::uint64_t* overflow_count) {
    if (batch.empty()) throw ContractError("empty batch");
    const std::size_t b = batch.size();

    std::vector<std::vector<double>> targets(b);
    std::vector<double> phi(b, 1.0);
    BatchGraph bg;
    for (std::size_t i = 0; i < b; ++i) {
        std::vector<double> z_t = nn::mlp_forward(teacher, "enc", batch[i].teacher_view);
        if (!uniform_weights) phi[i] = rarity_weight(z_t, bank, overflow_count);
        const double norm = std::sqrt(kern::sumsq(z_t.data(), z_t.size()));
        if (norm < kNormGuard) {
            ++bg.teacher_norm_guards;
            targets[i].assign(z_t.size(), 0.0);
        } else {
            kern::scale(1.0 / norm, z_t.data(), z_t.size());
            targets[i] = std::move(z_t);
        }
    }
    bg.weights = clip_normalize_weights(phi, clip_quantile);

    graph::NodeId total = -1;
    bg.feature_nodes.resize(b);
    for (std::size_t i = 0; i < b; ++i) {
        graph::NodeId xc = bg.tape.constant(batch[i].student_view);
        graph::NodeId z_s = nn::build_mlp(bg.tape, student, "enc", xc);
        bg.feature_nodes[i] = z_s;
        graph::NodeId projected = nn::build_mlp(bg.tape, student, "head", z_s);
        graph::NodeId dist = bg.tape.squared_distance(bg.tape.l2_normalize(projected),
                                                      bg.tape.constant(std::move(targets[i])));
        graph::NodeId term = bg.tape.scalar_mul(bg.weights[i], dist);
        total = (total < 0) ? term : bg.tape.add(total, term);
    }
    bg.tape.scalar_mul(1.0 / static_cast<double>(b), total);
    return bg;
}

// Mean over coordinates of the per-coordinate std across the batch.
double batch_feature_std(const std::vector<std::vector<double>>& feats) {
    if (feats.empty() || feats[0].empty()) return 0.0;
    const std::size_t n = feats.size(), d = feats[0].size();
    double acc = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += feats[i][k];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (feats[i][k] - mean) * (feats[i][k] - mean);
        acc += std::sqrt(var / static_cast<double>(n));
    }
    return acc / static_cast<double>(d);
}

}  // namespace

double rebalanced_loss(const graph::ParamSet& student, const graph::ParamSet& teacher,
                       const proto::PrototypeBank& bank, const std::vector<BatchTerm>& batch,
                       double clip_quantile, bool uniform_weights, std::uint64_t* overflow_count) {
    BatchGraph bg =
        build_batch_graph(student, teacher, bank, batch, clip_quantile, uniform_weights, overflow_count);
    return bg.tape.forward(student)[0];
}

RebalanceResult train_rebalance_stage(const data::UnlabeledView& data, const data::AugmentConfig& aug,
                                      const RebalanceConfig& cfg, graph::ParamSet teacher,
                                      const proto::PrototypeBank& bank,
                                      const nn::EncoderConfig& head_cfg,
                                      const graph::ParamSet* student_warm) {
    cfg.validate();
    aug.validate();
    if (data.n < 1) throw ContractError("need at least one sample");

    const auto t0 = std::chrono::steady_clock::now();

    graph::ParamSet student;
    if (student_warm) {
        for (const auto& [name, arr] : *student_warm) student.add(name, arr.shape, arr.data);
    } else {
        for (const auto& [name, arr] : teacher) student.add(name, arr.shape, arr.data);
        nn::append_mlp(student, head_cfg, "head", derive_seed(cfg.seed, "head-init"));
    }

    StageMetrics metrics;
    metrics.hist_upper = cfg.clip_quantile < 1.0 ? 1.0 / (1.0 - cfg.clip_quantile) : 16.0;
    metrics.weight_histogram.assign(kHistBins, 0);

    graph::SgdMomentum opt(cfg.lr, cfg.momentum);
    std::mt19937_64 shuffle_rng = make_rng(derive_seed(cfg.seed, "stage2-shuffle"));
    std::mt19937_64 aug_rng = make_rng(derive_seed(cfg.seed, "stage2-augment"));

    std::vector<std::size_t> order(data.n);
    std::iota(order.begin(), order.end(), 0);

    int high_loss_epochs = 0;
    int low_std_epochs = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0.0, std_sum = 0.0, weight_sum = 0.0;
        std::size_t batches = 0, weight_count = 0;
        double weight_max = 0.0;

        for (std::size_t start = 0; start < data.n; start += cfg.batch_size) {
            const std::size_t b = std::min(cfg.batch_size, data.n - start);

            std::vector<BatchTerm> batch(b);
            for (std::size_t i = 0; i < b; ++i) {
                auto x = data.sample(order[start + i]);
                batch[i].student_view = data::augment_view(x, aug, aug_rng);
                batch[i].teacher_view = data::augment_view(x, aug, aug_rng);
            }

            BatchGraph bg = build_batch_graph(student, teacher, bank, batch, cfg.clip_quantile,
                                              cfg.uniform_weights, &metrics.overflow_count);
            metrics.collapse_warnings += bg.teacher_norm_guards;
            for (double v : bg.weights) {
                weight_sum += v;
                weight_max = std::max(weight_max, v);
                auto bin = static_cast<std::size_t>(v / metrics.hist_upper * kHistBins);
                ++metrics.weight_histogram[std::min(bin, kHistBins - 1)];
            }
            weight_count += b;

            double loss;
            try {
                loss = bg.tape.forward(student)[0];
            } catch (const NumericError&) {
                ++metrics.skipped_batches;
                continue;
            }
            metrics.collapse_warnings += bg.tape.collapse_warnings();

            std::vector<std::vector<double>> feats(b);
            for (std::size_t i = 0; i < b; ++i) feats[i] = bg.tape.value(bg.feature_nodes[i]);
            std_sum += batch_feature_std(feats);

            graph::GradMap grads = bg.tape.backward();
            opt.step(student, grads);
            nn::ema_update(teacher, student, cfg.tau);

            loss_sum += loss;
            ++batches;
        }

        if (batches == 0) throw NumericError("every batch of an epoch was skipped");
        const double epoch_loss = loss_sum / static_cast<double>(batches);
        metrics.epoch_loss.push_back(epoch_loss);
        metrics.feature_std.push_back(std_sum / static_cast<double>(batches));
        metrics.mean_weight.push_back(weight_sum / static_cast<double>(weight_count));
        metrics.max_weight.push_back(weight_max);

        if (metrics.feature_std.back() < kCollapseStd) {
            if (++low_std_epochs >= 3) ++metrics.collapse_epochs;
        } else {
            low_std_epochs = 0;
        }

        if (epoch_loss > 10.0 * metrics.epoch_loss.front()) {
            if (++high_loss_epochs >= 3) {
                throw DivergenceError("stage 2 loss exceeded 10x its initial value for 3 epochs");
            }
        } else {
            high_loss_epochs = 0;
        }
    }

    RebalanceResult result;
    result.student = std::move(student);
    result.teacher = std::move(teacher);
    result.metrics = std::move(metrics);
    result.metrics.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

}  // namespace fassl::rebalance
