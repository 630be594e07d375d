#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "fassl/errors.hpp"
#include "fassl/graph.hpp"

using namespace fassl;
using graph::ParamSet;
using graph::Tape;

namespace {

ParamSet single_param(const std::string& name, std::vector<double> v) {
    ParamSet p;
    const std::size_t n = v.size();
    p.add(name, {n}, std::move(v));
    return p;
}

}  // namespace

TEST_CASE("forward closed forms") {
    SUBCASE("l2-normalize of [3,4]") {
        Tape t;
        t.l2_normalize(t.constant({3.0, 4.0}));
        ParamSet empty;
        auto& v = t.forward(empty);
        CHECK(v[0] == doctest::Approx(0.6).epsilon(1e-12));
        CHECK(v[1] == doctest::Approx(0.8).epsilon(1e-12));
    }
    SUBCASE("cosine of orthogonal vectors is 0") {
        Tape t;
        t.cosine_similarity(t.constant({1.0, 0.0}), t.constant({0.0, 1.0}));
        ParamSet empty;
        CHECK(t.forward(empty)[0] == doctest::Approx(0.0));
    }
    SUBCASE("log-sum-exp of [0,0] is ln 2") {
        Tape t;
        t.log_sum_exp(t.constant({0.0, 0.0}));
        ParamSet empty;
        CHECK(t.forward(empty)[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("squared distance and exp/log/sum") {
        Tape t;
        auto a = t.constant({1.0, 2.0});
        auto b = t.constant({4.0, 6.0});
        t.squared_distance(a, b);
        ParamSet empty;
        CHECK(t.forward(empty)[0] == doctest::Approx(25.0));

        Tape t2;
        t2.sum(t2.log(t2.exp(t2.constant({0.5, -1.5}))));
        CHECK(t2.forward(empty)[0] == doctest::Approx(-1.0).epsilon(1e-12));
    }
}

TEST_CASE("backward closed forms") {
    SUBCASE("gradient of sum is ones") {
        Tape t;
        t.sum(t.param("w"));
        ParamSet p = single_param("w", {1.0, -2.0, 5.0});
        t.forward(p);
        auto g = t.backward();
        CHECK(g.at("w") == std::vector<double>{1.0, 1.0, 1.0});
    }
    SUBCASE("gradient of <w,w> is 2w") {
        Tape t;
        auto w = t.param("w");
        t.inner_product(w, w);
        ParamSet p = single_param("w", {1.0, 2.0});
        t.forward(p);
        auto g = t.backward();
        CHECK(g.at("w") == std::vector<double>{2.0, 4.0});
    }
    SUBCASE("unused parameters get zero gradients") {
        Tape t;
        t.sum(t.param("w"));
        ParamSet p = single_param("w", {1.0});
        p.add("idle", {2}, {3.0, 4.0});
        t.forward(p);
        auto g = t.backward();
        CHECK(g.at("idle") == std::vector<double>{0.0, 0.0});
    }
    SUBCASE("fan-out accumulates") {
        Tape t;
        auto s = t.sum(t.param("w"));
        t.add(s, s);
        ParamSet p = single_param("w", {0.5, 0.25});
        t.forward(p);
        auto g = t.backward();
        CHECK(g.at("w") == std::vector<double>{2.0, 2.0});
    }
}

TEST_CASE("cosine gradient matches finite differences") {
    Tape t;
    t.cosine_similarity(t.param("a"), t.param("b"));
    ParamSet p;
    p.add("a", {2}, {1.0, 1.0});
    p.add("b", {2}, {1.0, 0.0});
    CHECK(graph::grad_check(t, p, 1e-5) <= 1e-6);
}

TEST_CASE("grad_check on a linear tape is exact up to rounding") {
    Tape t;
    t.sum(t.scalar_mul(3.0, t.param("w")));
    ParamSet p = single_param("w", {0.2, -0.7, 1.1});
    CHECK(graph::grad_check(t, p, 1e-5) <= 1e-9);
}

TEST_CASE("grad_check covers every op kind") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> dist(0.3, 1.5);

    Tape t;
    auto w = t.param("W");        // 3x4 matrix
    auto x = t.param("x");        // input vector
    auto y = t.matvec(w, 3, 4, x);
    auto r = t.relu(t.add(y, t.param("b")));
    auto n = t.l2_normalize(r);
    auto c = t.cosine_similarity(r, t.constant({0.4, -0.2, 0.9}));
    auto d = t.squared_distance(n, t.constant({0.1, 0.5, -0.3}));
    auto lse = t.log_sum_exp(t.scalar_mul(2.0, y));
    auto e = t.sum(t.log(t.exp(n)));
    auto packed = t.pack({c, d, lse, e});
    t.sum(packed);

    ParamSet p;
    std::vector<double> wv(12), xv(4), bv(3);
    for (auto& v : wv) v = dist(rng);
    for (auto& v : xv) v = dist(rng);
    for (auto& v : bv) v = dist(rng);
    p.add("W", {3, 4}, wv);
    p.add("x", {4}, xv);
    p.add("b", {3}, bv);
    CHECK(graph::grad_check(t, p, 1e-5) <= 1e-6);
}

TEST_CASE("l2-normalize gradient is orthogonal to the input direction") {
    // the squared norm of the normalized vector is constant, so its
    // directional derivative along anything must vanish
    Tape t;
    auto y = t.l2_normalize(t.param("x"));
    t.inner_product(y, y);
    ParamSet p = single_param("x", {0.3, -1.2, 0.8});
    t.forward(p);
    auto g = t.backward();
    for (double v : g.at("x")) CHECK(std::abs(v) <= 1e-12);
}

TEST_CASE("l2-normalize guard zeroes output and counts a collapse warning") {
    Tape t;
    auto y = t.l2_normalize(t.constant({0.0, 0.0}));
    t.sum(y);
    ParamSet empty;
    CHECK(t.forward(empty)[0] == 0.0);
    CHECK(t.collapse_warnings() == 1);
    auto g = t.backward();  // no throw; guarded gradient is zero
    (void)g;
}

TEST_CASE("forward is deterministic") {
    Tape t;
    auto w = t.param("w");
    t.log_sum_exp(t.scalar_mul(0.37, w));
    ParamSet p = single_param("w", {0.1, 0.2, 0.3, 0.4});
    auto v1 = t.forward(p);
    auto v2 = t.forward(p);
    CHECK(v1 == v2);
}

TEST_CASE("error contracts") {
    SUBCASE("backward before forward") {
        Tape t;
        t.sum(t.constant({1.0}));
        CHECK_THROWS_AS(t.backward(), StateError);
    }
    SUBCASE("shape mismatch") {
        Tape t;
        t.add(t.constant({1.0, 2.0}), t.constant({1.0}));
        ParamSet empty;
        CHECK_THROWS_AS(t.forward(empty), GraphError);
    }
    SUBCASE("non-finite intermediate names the node") {
        Tape t;
        t.log(t.constant({-1.0}));
        ParamSet empty;
        CHECK_THROWS_AS(t.forward(empty), NumericError);
    }
    SUBCASE("cosine of a zero-norm vector") {
        Tape t;
        t.cosine_similarity(t.constant({0.0, 0.0}), t.constant({1.0, 0.0}));
        ParamSet empty;
        CHECK_THROWS_AS(t.forward(empty), NumericError);
    }
    SUBCASE("grad_check wants a scalar output") {
        Tape t;
        t.relu(t.param("w"));
        ParamSet p = single_param("w", {1.0, 2.0});
        CHECK_THROWS_AS(graph::grad_check(t, p, 1e-5), ContractError);
    }
    SUBCASE("grad_check eps range") {
        Tape t;
        t.sum(t.param("w"));
        ParamSet p = single_param("w", {1.0});
        CHECK_THROWS_AS(graph::grad_check(t, p, 1e-2), ContractError);
        CHECK_THROWS_AS(graph::grad_check(t, p, 1e-8), ContractError);
    }
    SUBCASE("duplicate parameter registration") {
        ParamSet p = single_param("w", {1.0});
        CHECK_THROWS_AS(p.add("w", {1}, {2.0}), ContractError);
    }
}

TEST_CASE("matvec matches a hand-rolled product") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    const std::size_t rows = 5, cols = 7;
    std::vector<double> wv(rows * cols), xv(cols);
    for (auto& v : wv) v = dist(rng);
    for (auto& v : xv) v = dist(rng);

    Tape t;
    t.matvec(t.param("W"), rows, cols, t.constant(xv));
    ParamSet p;
    p.add("W", {rows, cols}, wv);
    auto& y = t.forward(p);
    for (std::size_t r = 0; r < rows; ++r) {
        double expect = 0.0;
        for (std::size_t c = 0; c < cols; ++c) expect += wv[r * cols + c] * xv[c];
        CHECK(y[r] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("sgd momentum update rule") {
    ParamSet p = single_param("w", {1.0});
    graph::SgdMomentum opt(0.1, 0.9);
    graph::GradMap g{{"w", {1.0}}};
    opt.step(p, g);  // v=1, w=1-0.1
    CHECK(p.cdata("w")[0] == doctest::Approx(0.9));
    opt.step(p, g);  // v=1.9, w=0.9-0.19
    CHECK(p.cdata("w")[0] == doctest::Approx(0.71));
}
