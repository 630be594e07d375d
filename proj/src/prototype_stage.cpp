#include "fassl/prototype_stage.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "fassl/encoder.hpp"
#include "fassl/errors.hpp"
#include "fassl/kernels.hpp"
#include "fassl/rng.hpp"

namespace fassl::proto {

PrototypeBank init_prototypes(std::size_t k, std::size_t d, std::uint64_t seed) {
    if (k < 2) throw SpecError("prototype bank needs K >= 2");
    if (d < 1) throw SpecError("prototype dim must be >= 1");
    PrototypeBank bank;
    bank.k = k;
    bank.d = d;
    bank.p.resize(k * d);
    std::mt19937_64 rng = make_rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
    for (double& v : bank.p) v = dist(rng);
    return bank;
}

std::vector<double> similarity_scores(const PrototypeBank& bank, std::span<const double> z) {
    if (z.size() != bank.d) throw ContractError("feature dim does not match prototype dim");
    std::vector<double> h(bank.k);
    kern::gemv(bank.p.data(), bank.k, bank.d, z.data(), h.data());
    return h;
}

graph::ParamSet bank_to_params(const PrototypeBank& bank) {
    graph::ParamSet params;
    params.add("proto.P", {bank.k, bank.d}, bank.p);
    return params;
}

PrototypeBank bank_from_params(const graph::ParamSet& params) {
    const graph::Array& arr = params.at("proto.P");
    if (arr.shape.size() != 2) throw FormatError("proto.P must be rank 2");
    PrototypeBank bank;
    bank.k = arr.shape[0];
    bank.d = arr.shape[1];
    bank.p = arr.data;
    if (bank.k < 2) throw FormatError("prototype bank needs K >= 2");
    return bank;
}

graph::NodeId build_contrastive_loss(graph::Tape& tape, const std::vector<graph::NodeId>& score_rows,
                                     double beta) {
    const std::size_t n = score_rows.size();
    if (n < 4 || n % 2 != 0) throw ContractError("contrastive loss needs 2B rows with B >= 2");
    if (!(beta > 0.0) || !std::isfinite(beta)) throw ContractError("beta must be finite and > 0");

    // sim(i,j) shared between both anchors; fan-out accumulates its gradient
    std::vector<graph::NodeId> sim(n * n, -1);
    auto sim_node = [&](std::size_t i, std::size_t j) {
        std::size_t lo = std::min(i, j), hi = std::max(i, j);
        graph::NodeId& id = sim[lo * n + hi];
        if (id < 0) id = tape.cosine_similarity(score_rows[lo], score_rows[hi]);
        return id;
    };

    graph::NodeId total = -1;
    for (std::size_t a = 0; a < n; ++a) {
        std::vector<graph::NodeId> others;
        others.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j) {
            if (j != a) others.push_back(sim_node(a, j));
        }
        graph::NodeId lse = tape.log_sum_exp(tape.scalar_mul(1.0 / beta, tape.pack(others)));
        graph::NodeId pos = sim_node(a, a ^ 1);
        graph::NodeId term = tape.add(lse, tape.scalar_mul(-1.0 / beta, pos));
        total = (total < 0) ? term : tape.add(total, term);
    }
    return tape.scalar_mul(1.0 / static_cast<double>(n), total);
}

double contrastive_loss(const std::vector<std::vector<double>>& score_rows, double beta) {
    graph::Tape tape;
    std::vector<graph::NodeId> rows;
    rows.reserve(score_rows.size());
    for (const auto& h : score_rows) rows.push_back(tape.constant(h));
    build_contrastive_loss(tape, rows, beta);
    graph::ParamSet empty;
    return tape.forward(empty)[0];
}

void ProtoStageConfig::validate() const {
    if (k < 2) throw SpecError("K must be >= 2");
    if (!(beta > 0.0) || !std::isfinite(beta)) throw SpecError("beta must be finite and > 0");
    if (batch_size < 2) throw SpecError("batch size must be >= 2 so negatives exist");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw SpecError("learning rate must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw SpecError("momentum must be in [0,1)");
}

ProtoStageResult train_prototype_stage(const data::UnlabeledView& data, const data::AugmentConfig& aug,
                                       const ProtoStageConfig& cfg, graph::ParamSet teacher_init,
                                       PrototypeBank bank_init) {
    cfg.validate();
    aug.validate();
    if (data.n < 2) throw ContractError("need at least two samples");

    const auto t0 = std::chrono::steady_clock::now();

    // teacher and bank are one trainable set during this stage
    graph::ParamSet params = std::move(teacher_init);
    params.add("proto.P", {bank_init.k, bank_init.d}, bank_init.p);

    StageMetrics metrics;
    graph::SgdMomentum opt(cfg.lr, cfg.momentum);
    std::mt19937_64 shuffle_rng = make_rng(derive_seed(cfg.seed, "stage1-shuffle"));
    std::mt19937_64 aug_rng = make_rng(derive_seed(cfg.seed, "stage1-augment"));

    std::vector<std::size_t> order(data.n);
    std::iota(order.begin(), order.end(), 0);

    int high_loss_epochs = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0.0;
        std::size_t batches = 0;

        for (std::size_t start = 0; start < data.n; start += cfg.batch_size) {
            const std::size_t b = std::min(cfg.batch_size, data.n - start);
            if (b < 2) continue;  // negatives required

            graph::Tape tape;
            graph::NodeId p_leaf = tape.param("proto.P");
            std::vector<graph::NodeId> rows;
            rows.reserve(2 * b);
            for (std::size_t i = 0; i < b; ++i) {
                auto x = data.sample(order[start + i]);
                for (int view = 0; view < 2; ++view) {
                    graph::NodeId xc = tape.constant(data::augment_view(x, aug, aug_rng));
                    graph::NodeId z = nn::build_mlp(tape, params, "enc", xc);
                    rows.push_back(tape.matvec(p_leaf, bank_init.k, bank_init.d, z));
                }
            }
            build_contrastive_loss(tape, rows, cfg.beta);

            double loss;
            try {
                loss = tape.forward(params)[0];
            } catch (const NumericError&) {
                ++metrics.skipped_batches;
                continue;
            }
            graph::GradMap grads = tape.backward();
            opt.step(params, grads);
            loss_sum += loss;
            ++batches;
        }

        if (batches == 0) throw NumericError("every batch of an epoch was skipped");
        const double epoch_loss = loss_sum / static_cast<double>(batches);
        metrics.epoch_loss.push_back(epoch_loss);

        if (epoch_loss > 10.0 * metrics.epoch_loss.front()) {
            if (++high_loss_epochs >= 3) {
                throw DivergenceError("stage 1 loss exceeded 10x its initial value for 3 epochs");
            }
        } else {
            high_loss_epochs = 0;
        }
    }

    ProtoStageResult result;
    result.bank = bank_from_params(params);
    for (const auto& [name, arr] : params) {
        if (name.rfind("enc.", 0) == 0) result.teacher.add(name, arr.shape, arr.data);
    }
    result.metrics = std::move(metrics);
    result.metrics.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

}  // namespace fassl::proto
