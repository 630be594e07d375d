#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fassl/dataset.hpp"
#include "fassl/encoder.hpp"
#include "fassl/errors.hpp"
#include "fassl/rebalance_stage.hpp"

using namespace fassl;

namespace {

proto::PrototypeBank bank_from_rows(std::vector<std::vector<double>> rows) {
    proto::PrototypeBank bank;
    bank.k = rows.size();
    bank.d = rows[0].size();
    for (const auto& r : rows) bank.p.insert(bank.p.end(), r.begin(), r.end());
    return bank;
}

graph::ParamSet identity_net(const std::string& prefix, std::size_t d) {
    graph::ParamSet p;
    std::vector<double> eye(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1.0;
    p.add(prefix + ".W0", {d, d}, eye);
    p.add_zeros(prefix + ".b0", {d});
    return p;
}

}  // namespace

TEST_CASE("rarity weight") {
    SUBCASE("orthogonal feature gives phi = 1 exactly") {
        auto bank = bank_from_rows({{0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}});
        std::vector<double> z{2.5, 0, 0, 0};
        CHECK(rebalance::rarity_weight(z, bank) == 1.0);
    }
    SUBCASE("similarity sum of ln 2 halves the weight") {
        auto bank = bank_from_rows({{std::log(2.0), 0.0}, {0.0, 0.0}});
        std::vector<double> z{1.0, 5.0};
        CHECK(rebalance::rarity_weight(z, bank) == doctest::Approx(0.5).epsilon(1e-15));
    }
    SUBCASE("strictly monotone: larger similarity sum, smaller weight") {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        auto bank = bank_from_rows({{0.3, -0.4, 0.8}, {0.6, 0.1, -0.2}, {-0.5, 0.9, 0.4}});
        std::vector<std::pair<double, double>> pairs;  // (sum, phi)
        for (int i = 0; i < 16; ++i) {
            std::vector<double> z(3);
            for (double& v : z) v = dist(rng);
            double s = 0.0;
            for (std::size_t k = 0; k < bank.k; ++k) {
                for (std::size_t j = 0; j < 3; ++j) s += z[j] * bank.p[k * 3 + j];
            }
            pairs.emplace_back(s, rebalance::rarity_weight(z, bank));
        }
        std::sort(pairs.begin(), pairs.end());
        for (std::size_t i = 1; i < pairs.size(); ++i) CHECK(pairs[i].second < pairs[i - 1].second);
    }
    SUBCASE("exponent clamp fires and is counted") {
        auto bank = bank_from_rows({{1000.0}, {0.0}});
        std::vector<double> z{1.0};
        std::uint64_t overflows = 0;
        const double phi = rebalance::rarity_weight(z, bank, &overflows);
        CHECK(phi == doctest::Approx(std::exp(-700.0)));
        CHECK(overflows == 1);
        CHECK(std::isfinite(phi));
    }
}

TEST_CASE("clip and normalize weights") {
    SUBCASE("equal weights normalize to ones") {
        auto out = rebalance::clip_normalize_weights({3.0, 3.0, 3.0}, 0.9);
        for (double w : out) CHECK(w == 1.0);
    }
    SUBCASE("outlier clipped to the interpolated quantile, then mean-normalized") {
        // independent 4-line oracle: sorted [1,1,1,1000], h=0.75*3=2.25 ->
        // cap = 1 + 0.25*999 = 250.75; clipped [1,1,1,250.75]; mean=63.4375
        const double cap = 1.0 + 0.25 * 999.0;
        const double mean = (1.0 + 1.0 + 1.0 + cap) / 4.0;
        auto out = rebalance::clip_normalize_weights({1.0, 1.0, 1.0, 1000.0}, 0.75);
        CHECK(out[0] == doctest::Approx(1.0 / mean).epsilon(1e-14));
        CHECK(out[1] == doctest::Approx(1.0 / mean).epsilon(1e-14));
        CHECK(out[2] == doctest::Approx(1.0 / mean).epsilon(1e-14));
        CHECK(out[3] == doctest::Approx(cap / mean).epsilon(1e-14));
    }
    SUBCASE("single weight normalizes to one") {
        auto out = rebalance::clip_normalize_weights({123.0}, 0.95);
        CHECK(out == std::vector<double>{1.0});
    }
    SUBCASE("post-clip mean is 1 and everything stays positive") {
        std::mt19937_64 rng(9);
        std::uniform_real_distribution<double> dist(0.01, 50.0);
        std::vector<double> w(33);
        for (double& v : w) v = dist(rng);
        auto out = rebalance::clip_normalize_weights(w, 0.95);
        const double mean = std::accumulate(out.begin(), out.end(), 0.0) / out.size();
        CHECK(mean == doctest::Approx(1.0).epsilon(1e-13));
        for (double v : out) CHECK(v > 0.0);
    }
    SUBCASE("q = 1 disables clipping") {
        auto out = rebalance::clip_normalize_weights({1.0, 3.0}, 1.0);
        CHECK(out[0] == doctest::Approx(0.5));
        CHECK(out[1] == doctest::Approx(1.5));
    }
    SUBCASE("contract violations") {
        CHECK_THROWS_AS(rebalance::clip_normalize_weights({1.0, -1.0}, 0.9), ContractError);
        CHECK_THROWS_AS(rebalance::clip_normalize_weights({1.0, 0.0}, 0.9), ContractError);
        CHECK_THROWS_AS(rebalance::clip_normalize_weights({}, 0.9), ContractError);
        CHECK_THROWS_AS(rebalance::clip_normalize_weights({1.0}, 0.4), ContractError);
    }
}

TEST_CASE("consistency loss closed forms") {
    std::vector<double> a{1.0, 2.0, -1.0};
    CHECK(rebalance::consistency_loss(a, a) == doctest::Approx(0.0));

    std::vector<double> neg{-1.0, -2.0, 1.0};
    CHECK(rebalance::consistency_loss(a, neg) == doctest::Approx(4.0).epsilon(1e-14));

    std::vector<double> e1{1.0, 0.0}, e2{0.0, 1.0};
    CHECK(rebalance::consistency_loss(e1, e2) == doctest::Approx(2.0).epsilon(1e-14));

    std::vector<double> zero{0.0, 0.0};
    CHECK_THROWS_AS(rebalance::consistency_loss(zero, e1), NumericError);
}

TEST_CASE("consistency loss equals 2 - 2cos and is scale invariant") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> a(5), b(5);
        for (double& v : a) v = dist(rng);
        for (double& v : b) v = dist(rng);

        double ab = 0.0, aa = 0.0, bb = 0.0;
        for (std::size_t i = 0; i < 5; ++i) {
            ab += a[i] * b[i];
            aa += a[i] * a[i];
            bb += b[i] * b[i];
        }
        const double cos_ab = ab / (std::sqrt(aa) * std::sqrt(bb));
        const double loss = rebalance::consistency_loss(a, b);
        CHECK(loss == doctest::Approx(2.0 - 2.0 * cos_ab).epsilon(1e-12));
        CHECK(loss >= 0.0);
        CHECK(loss <= 4.0);

        auto a2 = a;
        auto b2 = b;
        for (double& v : a2) v *= 8.0;   // exact power-of-two scaling
        for (double& v : b2) v *= 0.25;
        CHECK(rebalance::consistency_loss(a2, b2) == loss);
    }
}

TEST_CASE("rebalanced loss") {
    const std::size_t d = 4;
    graph::ParamSet teacher = identity_net("enc", d);

    SUBCASE("uniform mode equals the plain mean consistency loss") {
        graph::ParamSet student = identity_net("enc", d);
        nn::append_mlp(student, nn::EncoderConfig{{d, 5, d}}, "head", 3);
        auto bank = bank_from_rows({{1, 0, 0, 0}, {0, 1, 0, 0}});

        std::mt19937_64 rng(23);
        std::uniform_real_distribution<double> dist(0.2, 1.5);
        std::vector<rebalance::BatchTerm> batch(3);
        for (auto& term : batch) {
            term.student_view.resize(d);
            term.teacher_view.resize(d);
            for (double& v : term.student_view) v = dist(rng);
            for (double& v : term.teacher_view) v = dist(rng);
        }

        double manual = 0.0;
        for (const auto& term : batch) {
            std::vector<double> zs = nn::mlp_forward(student, "enc", term.student_view);
            std::vector<double> zh = nn::mlp_forward(student, "head", zs);
            std::vector<double> zt = nn::mlp_forward(teacher, "enc", term.teacher_view);
            manual += rebalance::consistency_loss(zh, zt);
        }
        manual /= static_cast<double>(batch.size());

        const double loss = rebalance::rebalanced_loss(student, teacher, bank, batch, 0.95, true);
        CHECK(loss == doctest::Approx(manual).epsilon(1e-12));
    }
    SUBCASE("identical views through an identity student give zero") {
        graph::ParamSet student = identity_net("enc", d);
        graph::ParamSet head = identity_net("head", d);
        for (const auto& [name, arr] : head) student.add(name, arr.shape, arr.data);
        auto bank = bank_from_rows({{0.1, 0.2, 0.3, 0.4}, {0.4, 0.3, 0.2, 0.1}});

        std::vector<rebalance::BatchTerm> batch(2);
        for (auto& term : batch) {
            term.student_view = {1.0, 2.0, 3.0, 4.0};
            term.teacher_view = {1.0, 2.0, 3.0, 4.0};
        }
        CHECK(rebalance::rebalanced_loss(student, teacher, bank, batch, 0.95, false) ==
              doctest::Approx(0.0));
    }
    SUBCASE("random batch matches a term-by-term scalar re-implementation") {
        nn::EncoderConfig enc_cfg{{d, 6, 3}};
        graph::ParamSet teacher_r = nn::init_mlp(enc_cfg, "enc", 51);
        graph::ParamSet student_r = nn::init_mlp(enc_cfg, "enc", 52);
        nn::append_mlp(student_r, nn::EncoderConfig{{3, 4, 3}}, "head", 53);
        proto::PrototypeBank bank = proto::init_prototypes(5, 3, 54);

        std::mt19937_64 rng(55);
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        std::vector<rebalance::BatchTerm> batch(3);
        for (auto& term : batch) {
            term.student_view.resize(d);
            term.teacher_view.resize(d);
            for (double& v : term.student_view) v = dist(rng);
            for (double& v : term.teacher_view) v = dist(rng);
        }

        // scalar route: phi -> clip/normalize -> weighted 2-2cos, all by hand
        std::vector<double> phi;
        std::vector<std::vector<double>> zt_list, zh_list;
        for (const auto& term : batch) {
            std::vector<double> zt = nn::mlp_forward(teacher_r, "enc", term.teacher_view);
            double s = 0.0;
            for (std::size_t k = 0; k < bank.k; ++k) {
                for (std::size_t j = 0; j < bank.d; ++j) s += zt[j] * bank.p[k * bank.d + j];
            }
            phi.push_back(std::exp(-s));
            zt_list.push_back(zt);
            zh_list.push_back(
                nn::mlp_forward(student_r, "head", nn::mlp_forward(student_r, "enc", term.student_view)));
        }
        auto w = rebalance::clip_normalize_weights(phi, 0.95);
        double manual = 0.0;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            double ab = 0.0, aa = 0.0, bb = 0.0;
            for (std::size_t j = 0; j < zh_list[i].size(); ++j) {
                ab += zh_list[i][j] * zt_list[i][j];
                aa += zh_list[i][j] * zh_list[i][j];
                bb += zt_list[i][j] * zt_list[i][j];
            }
            manual += w[i] * (2.0 - 2.0 * ab / (std::sqrt(aa) * std::sqrt(bb)));
        }
        manual /= static_cast<double>(batch.size());

        CHECK(rebalance::rebalanced_loss(student_r, teacher_r, bank, batch, 0.95, false) ==
              doctest::Approx(manual).epsilon(1e-10));
    }
}

TEST_CASE("stage-2 batch gradients pass a finite-difference check and never reach the teacher") {
    const std::size_t d = 4;
    nn::EncoderConfig enc_cfg{{d, 5, 3}};
    graph::ParamSet teacher = nn::init_mlp(enc_cfg, "enc", 61);
    graph::ParamSet student = nn::init_mlp(enc_cfg, "enc", 62);
    nn::append_mlp(student, nn::EncoderConfig{{3, 4, 3}}, "head", 63);
    proto::PrototypeBank bank = proto::init_prototypes(4, 3, 64);

    std::mt19937_64 rng(65);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<rebalance::BatchTerm> batch(4);
    for (auto& term : batch) {
        term.student_view.resize(d);
        term.teacher_view.resize(d);
        for (double& v : term.student_view) v = dist(rng);
        for (double& v : term.teacher_view) v = dist(rng);
    }

    // rebuild the same graph the loss uses, via the public entry point, by
    // checking that perturbing the STUDENT changes the loss consistently with
    // the analytic gradient obtained through a training step at lr -> 0.
    // Direct route: replicate with a tape through rebalanced_loss's builder is
    // internal, so this check drives the loss function itself.
    const double base = rebalance::rebalanced_loss(student, teacher, bank, batch, 0.95, false);
    CHECK(std::isfinite(base));

    const double eps = 1e-5;
    // spot-check a few coordinates of every student array with central FD
    // against the engine gradient computed through a one-off tape
    graph::Tape tape;
    {
        std::vector<graph::NodeId> terms;
        std::vector<double> phi;
        std::vector<std::vector<double>> targets;
        for (const auto& term : batch) {
            std::vector<double> zt = nn::mlp_forward(teacher, "enc", term.teacher_view);
            phi.push_back(rebalance::rarity_weight(zt, bank));
            double norm = 0.0;
            for (double v : zt) norm += v * v;
            norm = std::sqrt(norm);
            if (norm < 1e-12) {
                std::fill(zt.begin(), zt.end(), 0.0);  // the guarded-normalize target
            } else {
                for (double& v : zt) v /= norm;
            }
            targets.push_back(zt);
        }
        auto w = rebalance::clip_normalize_weights(phi, 0.95);
        graph::NodeId total = -1;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            graph::NodeId z = nn::build_mlp(tape, student, "enc", tape.constant(batch[i].student_view));
            graph::NodeId zh = nn::build_mlp(tape, student, "head", z);
            graph::NodeId dist_node =
                tape.squared_distance(tape.l2_normalize(zh), tape.constant(targets[i]));
            graph::NodeId term = tape.scalar_mul(w[i], dist_node);
            total = total < 0 ? term : tape.add(total, term);
        }
        tape.scalar_mul(1.0 / static_cast<double>(batch.size()), total);
    }
    CHECK(graph::grad_check(tape, student, eps) <= 1e-4);

    // same tape value agrees with the production loss
    CHECK(tape.forward(student)[0] == doctest::Approx(base).epsilon(1e-12));

    // gradient map holds student arrays only; the teacher and bank are
    // outside the graph entirely
    auto grads = tape.backward();
    for (const auto& [name, g] : grads) {
        CHECK(student.has(name));
        (void)g;
    }
}

TEST_CASE("stage 2 training loop") {
    data::DatasetSpec spec;
    spec.num_classes = 3;
    spec.max_count = 20;
    spec.imbalance_factor = 5.0;
    spec.input_dim = 6;
    spec.cluster_separation = 4.0;
    spec.cluster_noise = 0.8;
    spec.seed = 71;
    data::Dataset ds = data::synth_gaussian_mixture(spec);
    data::AugmentConfig aug{0.1, 0.05, 0.0};

    nn::EncoderConfig enc_cfg{{ds.dim(), 10, 6}};
    nn::EncoderConfig head_cfg{{6, 8, 6}};
    proto::PrototypeBank bank = proto::init_prototypes(6, 6, 72);

    rebalance::RebalanceConfig cfg;
    cfg.batch_size = 16;
    cfg.epochs = 3;
    cfg.lr = 0.05;
    cfg.seed = 73;

    SUBCASE("tau = 1 leaves the teacher untouched") {
        cfg.tau = 1.0;
        graph::ParamSet teacher = nn::init_mlp(enc_cfg, "enc", 74);
        const auto w0 = teacher.cdata("enc.W0");
        const auto b1 = teacher.cdata("enc.b1");
        auto res = rebalance::train_rebalance_stage(data::unlabeled(ds), aug, cfg, std::move(teacher),
                                                    bank, head_cfg);
        CHECK(res.teacher.cdata("enc.W0") == w0);
        CHECK(res.teacher.cdata("enc.b1") == b1);
    }
    SUBCASE("tau = 0 keeps teacher and student encoders identical") {
        cfg.tau = 0.0;
        cfg.epochs = 1;
        auto res = rebalance::train_rebalance_stage(data::unlabeled(ds), aug, cfg,
                                                    nn::init_mlp(enc_cfg, "enc", 74), bank, head_cfg);
        CHECK(res.teacher.cdata("enc.W0") == res.student.cdata("enc.W0"));
        CHECK(res.teacher.cdata("enc.b0") == res.student.cdata("enc.b0"));
        CHECK(res.teacher.cdata("enc.W1") == res.student.cdata("enc.W1"));
    }
    SUBCASE("student encoder starts from the teacher, head is fresh") {
        cfg.epochs = 0;
        graph::ParamSet teacher = nn::init_mlp(enc_cfg, "enc", 74);
        const auto w0 = teacher.cdata("enc.W0");
        auto res = rebalance::train_rebalance_stage(data::unlabeled(ds), aug, cfg, std::move(teacher),
                                                    bank, head_cfg);
        CHECK(res.student.cdata("enc.W0") == w0);
        CHECK(res.student.has("head.W0"));
        CHECK_FALSE(res.teacher.has("head.W0"));
        CHECK(res.metrics.epoch_loss.empty());
    }
    SUBCASE("metrics are populated and the run is reproducible") {
        auto run = [&] {
            return rebalance::train_rebalance_stage(data::unlabeled(ds), aug, cfg,
                                                    nn::init_mlp(enc_cfg, "enc", 74), bank, head_cfg);
        };
        auto a = run();
        auto b = run();
        CHECK(a.metrics.epoch_loss.size() == 3);
        CHECK(a.metrics.feature_std.size() == 3);
        CHECK(a.metrics.mean_weight.size() == 3);
        for (double v : a.metrics.feature_std) CHECK(v > 1e-6);
        for (double v : a.metrics.mean_weight) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(a.metrics.epoch_loss == b.metrics.epoch_loss);
        CHECK(a.student.cdata("head.W0") == b.student.cdata("head.W0"));
        CHECK(ds.label_read_count() == 0);

        std::uint64_t hist_total = 0;
        for (auto c : a.metrics.weight_histogram) hist_total += c;
        CHECK(hist_total > 0);
    }
}
