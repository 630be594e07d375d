#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "fassl/dataset.hpp"
#include "fassl/errors.hpp"
#include "fassl/rng.hpp"

using namespace fassl;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const char* name) {
    return (fs::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("longtail counts follow the exponential profile") {
    CHECK(data::make_longtail_counts(3, 100, 100.0) == std::vector<std::uint64_t>{100, 10, 1});
    CHECK(data::make_longtail_counts(5, 50, 1.0) == std::vector<std::uint64_t>{50, 50, 50, 50, 50});

    // independent evaluation of the profile formula for each class
    auto counts = data::make_longtail_counts(10, 500, 100.0);
    for (std::size_t c = 0; c < 10; ++c) {
        const double expect = 500.0 * std::pow(100.0, -static_cast<double>(c) / 9.0);
        CHECK(counts[c] == static_cast<std::uint64_t>(std::max(1.0, std::round(expect))));
    }
    CHECK(counts.front() == 500);
    CHECK(static_cast<double>(counts.front()) / static_cast<double>(counts.back()) ==
          doctest::Approx(100.0));
}

TEST_CASE("longtail counts are non-increasing and stay within the rounding band") {
    for (double rho : {1.0, 10.0, 100.0, 500.0}) {
        for (std::size_t c : {3u, 7u, 10u, 30u}) {
            auto counts = data::make_longtail_counts(c, 200, rho);
            for (std::size_t i = 1; i < counts.size(); ++i) CHECK(counts[i] <= counts[i - 1]);
            CHECK(counts.front() == 200);
            const double n_min = static_cast<double>(counts.back());
            const double ratio = static_cast<double>(counts.front()) / n_min;
            CHECK(ratio >= rho * (1.0 - 1.0 / n_min) - 1e-9);
            CHECK(ratio <= rho * (1.0 + 1.0 / n_min) + 1e-9);
        }
    }
}

TEST_CASE("longtail counts error contracts") {
    CHECK_THROWS_AS(data::make_longtail_counts(0, 10, 2.0), SpecError);
    CHECK_THROWS_AS(data::make_longtail_counts(5, 10, std::nan("")), SpecError);
    CHECK_THROWS_AS(data::make_longtail_counts(5, 10, 0.5), SpecError);
}

TEST_CASE("group partition splits into near-equal thirds, Frequent first") {
    auto groups9 = data::partition_groups(data::make_longtail_counts(9, 100, 10.0));
    auto groups10 = data::partition_groups(data::make_longtail_counts(10, 100, 10.0));
    auto groups11 = data::partition_groups(data::make_longtail_counts(11, 100, 10.0));

    auto sizes = [](const std::vector<data::Group>& g) {
        std::array<int, 3> s{0, 0, 0};
        for (auto v : g) ++s[static_cast<int>(v)];
        return s;
    };
    CHECK(sizes(groups9) == std::array<int, 3>{3, 3, 3});
    CHECK(sizes(groups10) == std::array<int, 3>{4, 3, 3});
    CHECK(sizes(groups11) == std::array<int, 3>{4, 4, 3});

    // frequency ordering across the blocks
    auto counts = data::make_longtail_counts(10, 100, 10.0);
    std::uint64_t min_freq = UINT64_MAX, max_med = 0, min_med = UINT64_MAX, max_rare = 0;
    for (std::size_t c = 0; c < counts.size(); ++c) {
        switch (groups10[c]) {
            case data::Group::frequent: min_freq = std::min(min_freq, counts[c]); break;
            case data::Group::medium:
                max_med = std::max(max_med, counts[c]);
                min_med = std::min(min_med, counts[c]);
                break;
            case data::Group::rare: max_rare = std::max(max_rare, counts[c]); break;
        }
    }
    CHECK(min_freq >= max_med);
    CHECK(min_med >= max_rare);

    CHECK_THROWS_AS(data::partition_groups({5, 3}), SpecError);
}

TEST_CASE("gaussian mixture synthesis") {
    data::DatasetSpec spec;
    spec.num_classes = 3;
    spec.max_count = 100;
    spec.imbalance_factor = 100.0;
    spec.input_dim = 8;
    spec.cluster_separation = 5.0;
    spec.cluster_noise = 1.0;
    spec.seed = 7;

    SUBCASE("counts forced by the profile") {
        data::Dataset ds = data::synth_gaussian_mixture(spec);
        CHECK(ds.per_class_counts() == std::vector<std::uint64_t>{100, 10, 1});
        CHECK(ds.size() == 111);
        CHECK(ds.dim() == 8);
    }
    SUBCASE("same seed gives bit-identical samples") {
        data::Dataset a = data::synth_gaussian_mixture(spec);
        data::Dataset b = data::synth_gaussian_mixture(spec);
        CHECK(a.raw_samples() == b.raw_samples());
    }
    SUBCASE("tight clusters are perfectly separable by nearest centroid") {
        spec.cluster_noise = 0.01;
        data::Dataset ds = data::synth_gaussian_mixture(spec);
        // centroid oracle computed from labeled samples
        std::vector<std::vector<double>> centroid(3, std::vector<double>(ds.dim(), 0.0));
        for (std::size_t i = 0; i < ds.size(); ++i) {
            auto row = ds.sample(i);
            auto& c = centroid[ds.label(i)];
            for (std::size_t k = 0; k < row.size(); ++k) c[k] += row[k];
        }
        for (std::size_t c = 0; c < 3; ++c) {
            for (double& v : centroid[c]) v /= static_cast<double>(ds.per_class_counts()[c]);
        }
        std::size_t correct = 0;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            auto row = ds.sample(i);
            std::size_t best = 0;
            double best_d = 1e300;
            for (std::size_t c = 0; c < 3; ++c) {
                double d = 0.0;
                for (std::size_t k = 0; k < row.size(); ++k) {
                    d += (row[k] - centroid[c][k]) * (row[k] - centroid[c][k]);
                }
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            correct += best == ds.label(i);
        }
        CHECK(correct == ds.size());
    }
    SUBCASE("unattainable separation raises a generation error") {
        spec.num_classes = 12;
        spec.input_dim = 2;  // 12 points on a circle of radius sep cannot all be sep apart
        CHECK_THROWS_AS(data::synth_gaussian_mixture(spec), GenerationError);
    }
    SUBCASE("balanced eval split shares the class means") {
        spec.cluster_noise = 0.05;
        data::Dataset train = data::synth_gaussian_mixture(spec);
        data::Dataset test = data::synth_balanced_eval(spec, 10);
        CHECK(test.per_class_counts() == std::vector<std::uint64_t>{10, 10, 10});
        // per-class centroids of both sets are close (same means, tiny noise)
        for (std::uint32_t cls = 0; cls < 3; ++cls) {
            std::vector<double> c_train(spec.input_dim, 0.0), c_test(spec.input_dim, 0.0);
            std::size_t n_train = 0, n_test = 0;
            for (std::size_t i = 0; i < train.size(); ++i) {
                if (train.label(i) != cls) continue;
                auto r = train.sample(i);
                for (std::size_t k = 0; k < r.size(); ++k) c_train[k] += r[k];
                ++n_train;
            }
            for (std::size_t i = 0; i < test.size(); ++i) {
                if (test.label(i) != cls) continue;
                auto r = test.sample(i);
                for (std::size_t k = 0; k < r.size(); ++k) c_test[k] += r[k];
                ++n_test;
            }
            for (std::size_t k = 0; k < spec.input_dim; ++k) {
                CHECK(std::abs(c_train[k] / n_train - c_test[k] / n_test) < 0.2);
            }
        }
    }
    SUBCASE("invalid specs are rejected") {
        spec.num_classes = 2;
        CHECK_THROWS_AS(spec.validate(), SpecError);
        spec.num_classes = 3;
        spec.imbalance_factor = 0.0;
        CHECK_THROWS_AS(spec.validate(), SpecError);
    }
}

TEST_CASE("augment_view") {
    std::mt19937_64 rng = make_rng(99);

    SUBCASE("pure scale jitter maps zero to zero") {
        data::AugmentConfig cfg{0.0, 0.2, 0.0};
        std::vector<float> x(6, 0.0f);
        auto out = data::augment_view(x, cfg, rng);
        for (double v : out) CHECK(v == 0.0);
    }
    SUBCASE("noise variance matches the config (Monte Carlo)") {
        data::AugmentConfig cfg{0.1, 0.0, 0.0};
        std::vector<float> x{1.0f};
        double sum = 0.0, sumsq = 0.0;
        const int draws = 100000;
        for (int i = 0; i < draws; ++i) {
            const double delta = data::augment_view(x, cfg, rng)[0] - 1.0;
            sum += delta;
            sumsq += delta * delta;
        }
        const double var = sumsq / draws - (sum / draws) * (sum / draws);
        CHECK(var == doctest::Approx(0.01).epsilon(0.05));
    }
    SUBCASE("fixed rng state reproduces the view") {
        data::AugmentConfig cfg{0.3, 0.1, 0.2};
        std::vector<float> x{1.0f, -2.0f, 3.0f};
        std::mt19937_64 r1 = make_rng(5), r2 = make_rng(5);
        CHECK(data::augment_view(x, cfg, r1) == data::augment_view(x, cfg, r2));
    }
    SUBCASE("dimension preserved, output finite") {
        data::AugmentConfig cfg{0.5, 0.3, 0.4};
        std::vector<float> x{1e30f, -1e30f, 0.0f, 2.5f};
        auto out = data::augment_view(x, cfg, rng);
        CHECK(out.size() == x.size());
        for (double v : out) CHECK(std::isfinite(v));
    }
    SUBCASE("deterministic all-zero augmentation is rejected") {
        data::AugmentConfig cfg{0.0, 0.0, 0.0};
        CHECK_THROWS_AS(cfg.validate(), SpecError);
    }
}

TEST_CASE("dataset file round-trip") {
    data::DatasetSpec spec;
    spec.num_classes = 4;
    spec.max_count = 20;
    spec.imbalance_factor = 10.0;
    spec.input_dim = 5;
    spec.cluster_separation = 4.0;
    spec.cluster_noise = 0.5;
    spec.seed = 11;
    data::Dataset ds = data::synth_gaussian_mixture(spec);

    const std::string path = temp_path("fassl_ds_roundtrip.fasl");
    data::save_dataset(ds, path);
    data::Dataset back = data::load_dataset(path);

    CHECK(back.size() == ds.size());
    CHECK(back.dim() == ds.dim());
    CHECK(back.per_class_counts() == ds.per_class_counts());
    CHECK(back.group_of_class() == ds.group_of_class());
    CHECK(back.raw_samples() == ds.raw_samples());
    for (std::size_t i = 0; i < ds.size(); ++i) CHECK(back.label(i) == ds.label(i));
    fs::remove(path);
}

TEST_CASE("dataset file error contracts") {
    data::DatasetSpec spec;
    spec.num_classes = 3;
    spec.max_count = 10;
    spec.imbalance_factor = 5.0;
    spec.input_dim = 3;
    spec.cluster_separation = 3.0;
    spec.cluster_noise = 0.3;
    spec.seed = 2;
    data::Dataset ds = data::synth_gaussian_mixture(spec);
    const std::string path = temp_path("fassl_ds_corrupt.fasl");
    data::save_dataset(ds, path);

    SUBCASE("truncated file") {
        auto bytes = [&] {
            std::ifstream in(path, std::ios::binary);
            return std::string(std::istreambuf_iterator<char>(in), {});
        }();
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), 40);
        out.close();
        CHECK_THROWS_AS(data::load_dataset(path), FormatError);
    }
    SUBCASE("bad magic") {
        std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(0);
        f.write("XXXX", 4);
        f.close();
        CHECK_THROWS_AS(data::load_dataset(path), FormatError);
    }
    SUBCASE("counts not summing to N") {
        // first per-class count lives right after the 32-byte header
        std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(32);
        char c;
        f.seekg(32);
        f.read(&c, 1);
        ++c;
        f.seekp(32);
        f.write(&c, 1);
        f.close();
        CHECK_THROWS_AS(data::load_dataset(path), FormatError);
    }
    fs::remove(path);
}

TEST_CASE("unlabeled view never touches the label counter") {
    data::DatasetSpec spec;
    spec.num_classes = 3;
    spec.max_count = 12;
    spec.imbalance_factor = 4.0;
    spec.input_dim = 4;
    spec.cluster_separation = 3.0;
    spec.cluster_noise = 0.5;
    spec.seed = 3;
    data::Dataset ds = data::synth_gaussian_mixture(spec);
    data::UnlabeledView view = data::unlabeled(ds);
    double acc = 0.0;
    for (std::size_t i = 0; i < view.n; ++i) {
        for (float v : view.sample(i)) acc += v;
    }
    (void)acc;
    CHECK(ds.label_read_count() == 0);
    ds.label(0);
    CHECK(ds.label_read_count() == 1);
}
