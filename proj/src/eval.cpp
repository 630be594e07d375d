#include "fassl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "fassl/encoder.hpp"
#include "fassl/errors.hpp"
#include "fassl/kernels.hpp"
#include "fassl/rng.hpp"

namespace fassl::eval {

std::vector<double> extract_features(const graph::ParamSet& encoder, const std::string& prefix,
                                     const data::Dataset& ds) {
    const std::size_t d = nn::mlp_output_dim(encoder, prefix);
    std::vector<double> features(ds.size() * d);
    std::vector<double> x(ds.dim());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto row = ds.sample(i);
        for (std::size_t k = 0; k < row.size(); ++k) x[k] = static_cast<double>(row[k]);
        std::vector<double> z = nn::mlp_forward(encoder, prefix, x);
        std::copy(z.begin(), z.end(), features.begin() + i * d);
    }
    return features;
}

std::vector<std::uint32_t> read_labels(const data::Dataset& ds) {
    std::vector<std::uint32_t> labels(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) labels[i] = ds.label(i);
    return labels;
}

namespace {

struct ProbeGraph {
    graph::Tape tape;
    graph::ParamSet params;
};

}  // namespace

LinearProbe train_linear_probe(const std::vector<double>& features, std::size_t n, std::size_t d,
                               const std::vector<std::uint32_t>& labels,
                               const std::vector<std::size_t>& train_idx, std::size_t num_classes,
                               std::size_t epochs, double lr) {
    if (features.size() != n * d) throw ContractError("feature matrix size mismatch");
    if (labels.size() != n) throw ContractError("label count mismatch");
    if (train_idx.empty()) throw ContractError("empty probe training set");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ContractError("probe lr must be finite and >= 0");

    LinearProbe probe;
    probe.num_classes = num_classes;
    probe.dim = d;

    std::vector<std::size_t> class_present(num_classes, 0);
    for (std::size_t i : train_idx) {
        if (i >= n) throw ContractError("train index out of range");
        ++class_present[labels[i]];
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (class_present[c] == 0) probe.missing_classes.push_back(static_cast<std::uint32_t>(c));
    }

    // full-batch cross-entropy graph; parameters are re-bound every forward,
    // so one tape serves all epochs and retries
    graph::Tape tape;
    graph::NodeId wleaf = tape.param("probe.W");
    graph::NodeId bleaf = tape.param("probe.b");
    graph::NodeId total = -1;
    for (std::size_t i : train_idx) {
        std::vector<double> f(features.begin() + i * d, features.begin() + (i + 1) * d);
        graph::NodeId logits = tape.add(tape.matvec(wleaf, num_classes, d, tape.constant(std::move(f))), bleaf);
        std::vector<double> onehot(num_classes, 0.0);
        onehot[labels[i]] = 1.0;
        graph::NodeId pos = tape.inner_product(logits, tape.constant(std::move(onehot)));
        graph::NodeId term = tape.add(tape.log_sum_exp(logits), tape.scalar_mul(-1.0, pos));
        total = (total < 0) ? term : tape.add(total, term);
    }
    tape.scalar_mul(1.0 / static_cast<double>(train_idx.size()), total);

    constexpr int kMaxRetries = 30;
    double attempt_lr = lr;
    for (int attempt = 0;; ++attempt) {
        graph::ParamSet params;
        params.add_zeros("probe.W", {num_classes, d});
        params.add_zeros("probe.b", {num_classes});
        graph::SgdMomentum opt(attempt_lr, 0.0);

        std::vector<double> curve;
        bool monotone = true;
        for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
            double ce = tape.forward(params)[0];
            if (!curve.empty() && ce > curve.back() + 1e-6) {
                monotone = false;
                break;
            }
            curve.push_back(ce);
            opt.step(params, tape.backward());
        }

        if (monotone || attempt >= kMaxRetries || lr == 0.0) {
            probe.w = params.cdata("probe.W");
            probe.b = params.cdata("probe.b");
            probe.epoch_ce = std::move(curve);
            probe.lr_used = attempt_lr;
            probe.retries = attempt;
            return probe;
        }
        attempt_lr *= 0.5;
    }
}

std::vector<std::uint32_t> probe_predict(const LinearProbe& probe, const std::vector<double>& features,
                                         std::size_t n) {
    if (features.size() != n * probe.dim) throw ContractError("feature matrix size mismatch");
    std::vector<std::uint32_t> preds(n);
    std::vector<double> logits(probe.num_classes);
    for (std::size_t i = 0; i < n; ++i) {
        kern::gemv(probe.w.data(), probe.num_classes, probe.dim, features.data() + i * probe.dim,
                   logits.data());
        kern::vadd(logits.data(), probe.b.data(), logits.data(), logits.size());
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.size(); ++c) {
            if (logits[c] > logits[best]) best = c;
        }
        preds[i] = static_cast<std::uint32_t>(best);
    }
    return preds;
}

GroupMetrics group_metrics(const std::vector<std::uint32_t>& predictions,
                           const std::vector<std::uint32_t>& labels,
                           const std::vector<data::Group>& group_of_class) {
    if (predictions.size() != labels.size()) throw ContractError("prediction/label count mismatch");
    const std::size_t c = group_of_class.size();
    std::vector<std::size_t> total(c, 0), correct(c, 0);
    std::size_t all_correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= c) throw ContractError("label out of range");
        ++total[labels[i]];
        if (predictions[i] == labels[i]) {
            ++correct[labels[i]];
            ++all_correct;
        }
    }

    double group_acc[3] = {0.0, 0.0, 0.0};
    for (int g = 0; g < 3; ++g) {
        double acc_sum = 0.0;
        std::size_t classes_seen = 0;
        for (std::size_t cls = 0; cls < c; ++cls) {
            if (static_cast<int>(group_of_class[cls]) != g || total[cls] == 0) continue;
            acc_sum += 100.0 * static_cast<double>(correct[cls]) / static_cast<double>(total[cls]);
            ++classes_seen;
        }
        if (classes_seen == 0) throw ContractError("empty test pool for a frequency group");
        group_acc[g] = acc_sum / static_cast<double>(classes_seen);
    }

    GroupMetrics m;
    m.acc_frequent = group_acc[0];
    m.acc_medium = group_acc[1];
    m.acc_rare = group_acc[2];
    m.acc_all = (m.acc_frequent + m.acc_medium + m.acc_rare) / 3.0;
    double var = 0.0;
    for (double a : group_acc) var += (a - m.acc_all) * (a - m.acc_all);
    m.std_groups = std::sqrt(var / 3.0);
    m.acc_overall = 100.0 * static_cast<double>(all_correct) / static_cast<double>(labels.size());
    return m;
}

std::vector<std::size_t> few_shot_subset(const std::vector<std::uint32_t>& labels, double fraction,
                                         std::uint64_t seed, std::size_t num_classes) {
    if (!(fraction > 0.0) || fraction > 1.0) throw ContractError("fraction must be in (0, 1]");
    std::vector<std::vector<std::size_t>> by_class(num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= num_classes) throw ContractError("label out of range");
        by_class[labels[i]].push_back(i);
    }
    std::mt19937_64 rng = make_rng(derive_seed(seed, "few-shot"));
    std::vector<std::size_t> picked;
    for (std::size_t c = 0; c < num_classes; ++c) {
        auto& pool = by_class[c];
        if (pool.empty()) continue;
        const auto want = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(pool.size()))));
        std::shuffle(pool.begin(), pool.end(), rng);
        picked.insert(picked.end(), pool.begin(), pool.begin() + std::min(want, pool.size()));
    }
    std::sort(picked.begin(), picked.end());
    return picked;
}

ProtoDistribution prototype_class_distribution(const proto::PrototypeBank& bank,
                                               const data::Dataset& ds,
                                               const std::vector<double>& features) {
    const std::size_t n = ds.size();
    const std::size_t d = bank.d;
    if (features.size() != n * d) throw ContractError("feature matrix does not match prototype dim");

    std::vector<double> feat_norm(n);
    for (std::size_t i = 0; i < n; ++i) {
        feat_norm[i] = std::sqrt(kern::sumsq(features.data() + i * d, d));
    }

    ProtoDistribution dist;
    dist.per_class_counts.assign(ds.num_classes(), 0);
    dist.nearest_sample.assign(bank.k, -1);
    std::size_t group_counts[3] = {0, 0, 0};

    for (std::size_t k = 0; k < bank.k; ++k) {
        const double* p = bank.p.data() + k * d;
        const double pnorm = std::sqrt(kern::sumsq(p, d));
        if (pnorm < 1e-12) {
            ++dist.unassigned;
            continue;
        }
        long best = -1;
        double best_sim = -2.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (feat_norm[i] < 1e-12) continue;
            const double sim = kern::dot(p, features.data() + i * d, d) / (pnorm * feat_norm[i]);
            if (sim > best_sim) {
                best_sim = sim;
                best = static_cast<long>(i);
            }
        }
        if (best < 0) {
            ++dist.unassigned;
            continue;
        }
        dist.nearest_sample[k] = best;
        const std::uint32_t cls = ds.label(static_cast<std::size_t>(best));
        ++dist.per_class_counts[cls];
        ++group_counts[static_cast<int>(ds.group_of_class()[cls])];
    }

    const double kf = static_cast<double>(bank.k);
    dist.pct_frequent = 100.0 * static_cast<double>(group_counts[0]) / kf;
    dist.pct_medium = 100.0 * static_cast<double>(group_counts[1]) / kf;
    dist.pct_rare = 100.0 * static_cast<double>(group_counts[2]) / kf;
    return dist;
}

void export_embeddings(const std::vector<double>& features, std::size_t n, std::size_t d,
                       const std::vector<std::uint32_t>& labels, const std::string& path) {
    if (features.size() != n * d || labels.size() != n) throw ContractError("embedding export size mismatch");
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open for writing: " + path);
    for (std::size_t k = 0; k < d; ++k) out << 'f' << k << ',';
    out << "label\n";
    char buf[32];
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < d; ++k) {
            std::snprintf(buf, sizeof(buf), "%.9g", features[i * d + k]);
            out << buf << ',';
        }
        out << labels[i] << '\n';
    }
    if (!out) throw FormatError("short write: " + path);
}

}  // namespace fassl::eval
