#include "fassl/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "fassl/errors.hpp"
#include "fassl/rng.hpp"

static_assert(std::endian::native == std::endian::little, "dataset format is little-endian");

namespace fassl::data {

namespace {
constexpr char kMagic[4] = {'F', 'A', 'S', 'L'};
constexpr std::uint32_t kVersion = 1;
constexpr int kMeanAttemptsPerClass = 1000;
}  // namespace

const char* group_name(Group g) {
    switch (g) {
        case Group::frequent: return "frequent";
        case Group::medium: return "medium";
        case Group::rare: return "rare";
    }
    return "?";
}

void DatasetSpec::validate() const {
    if (num_classes < 3) throw SpecError("num_classes must be >= 3 (three groups must be nonempty)");
    if (max_count < 1) throw SpecError("max_count must be >= 1");
    if (!std::isfinite(imbalance_factor) || imbalance_factor < 1.0) {
        throw SpecError("imbalance_factor must be finite and >= 1");
    }
    if (input_dim < 1) throw SpecError("input_dim must be >= 1");
    if (!(cluster_separation > 0.0) || !std::isfinite(cluster_separation)) {
        throw SpecError("cluster_separation must be > 0");
    }
    if (!(cluster_noise > 0.0) || !std::isfinite(cluster_noise)) {
        throw SpecError("cluster_noise must be > 0");
    }
}

std::vector<std::uint64_t> make_longtail_counts(std::size_t num_classes, std::size_t max_count,
                                                double rho) {
    if (num_classes == 0) throw SpecError("num_classes must be >= 1");
    if (max_count == 0) throw SpecError("max_count must be >= 1");
    if (!std::isfinite(rho) || rho < 1.0) throw SpecError("rho must be finite and >= 1");

    std::vector<std::uint64_t> counts(num_classes);
    counts[0] = max_count;
    for (std::size_t c = 1; c < num_classes; ++c) {
        double exponent = -static_cast<double>(c) / static_cast<double>(num_classes - 1);
        double raw = static_cast<double>(max_count) * std::pow(rho, exponent);
        counts[c] = static_cast<std::uint64_t>(std::max<long long>(1, std::llround(raw)));
    }
    return counts;
}

std::vector<Group> partition_groups(const std::vector<std::uint64_t>& per_class_counts) {
    const std::size_t c = per_class_counts.size();
    if (c < 3) throw SpecError("group partition needs at least 3 classes");
    for (std::size_t i = 1; i < c; ++i) {
        if (per_class_counts[i] > per_class_counts[i - 1]) {
            throw SpecError("per-class counts must be non-increasing");
        }
    }
    const std::size_t base = c / 3, rem = c % 3;
    const std::size_t n_frequent = base + (rem >= 1 ? 1 : 0);
    const std::size_t n_medium = base + (rem >= 2 ? 1 : 0);
    std::vector<Group> groups(c, Group::rare);
    for (std::size_t i = 0; i < n_frequent; ++i) groups[i] = Group::frequent;
    for (std::size_t i = n_frequent; i < n_frequent + n_medium; ++i) groups[i] = Group::medium;
    return groups;
}

Dataset::Dataset(std::vector<float> samples, std::size_t dim, std::vector<std::uint32_t> labels,
                 std::vector<std::uint64_t> per_class_counts)
    : samples_(std::move(samples)),
      dim_(dim),
      labels_(std::move(labels)),
      per_class_counts_(std::move(per_class_counts)) {
    n_ = labels_.size();
    if (dim_ == 0 || samples_.size() != n_ * dim_) throw ContractError("dataset sample buffer size mismatch");
    std::uint64_t total = 0;
    std::vector<std::uint64_t> hist(per_class_counts_.size(), 0);
    for (std::uint32_t y : labels_) {
        if (y >= per_class_counts_.size()) throw ContractError("label out of range");
        ++hist[y];
    }
    for (std::size_t c = 0; c < per_class_counts_.size(); ++c) {
        if (per_class_counts_[c] == 0) throw ContractError("every class must appear at least once");
        if (hist[c] != per_class_counts_[c]) throw ContractError("per-class counts disagree with labels");
        total += per_class_counts_[c];
    }
    if (total != n_) throw ContractError("per-class counts do not sum to N");
    groups_ = partition_groups(per_class_counts_);
}

namespace {

// Means on a sphere of radius `sep`, rejection-sampled until every pair is at
// least `sep` apart.
std::vector<std::vector<double>> place_means(std::size_t num_classes, std::size_t dim, double sep,
                                             std::uint64_t seed) {
    std::mt19937_64 rng = make_rng(derive_seed(seed, "means"));
    std::normal_distribution<double> unit(0.0, 1.0);
    std::vector<std::vector<double>> means;
    means.reserve(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
        bool placed = false;
        for (int attempt = 0; attempt < kMeanAttemptsPerClass && !placed; ++attempt) {
            std::vector<double> m(dim);
            double norm2 = 0.0;
            for (double& v : m) {
                v = unit(rng);
                norm2 += v * v;
            }
            double norm = std::sqrt(norm2);
            if (norm < 1e-9) continue;
            for (double& v : m) v *= sep / norm;
            bool ok = true;
            for (const auto& other : means) {
                double d2 = 0.0;
                for (std::size_t k = 0; k < dim; ++k) d2 += (m[k] - other[k]) * (m[k] - other[k]);
                if (d2 < sep * sep) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                means.push_back(std::move(m));
                placed = true;
            }
        }
        if (!placed) {
            throw GenerationError("could not place class means with the requested separation in dim " +
                                  std::to_string(dim));
        }
    }
    return means;
}

Dataset synth_from_counts(const DatasetSpec& spec, const std::vector<std::uint64_t>& counts,
                          std::string_view sample_stream) {
    auto means = place_means(spec.num_classes, spec.input_dim, spec.cluster_separation, spec.seed);

    std::size_t n = 0;
    for (std::uint64_t c : counts) n += c;

    std::mt19937_64 rng = make_rng(derive_seed(spec.seed, sample_stream));
    std::normal_distribution<double> noise(0.0, spec.cluster_noise);

    std::vector<float> samples;
    samples.reserve(n * spec.input_dim);
    std::vector<std::uint32_t> labels;
    labels.reserve(n);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        for (std::uint64_t i = 0; i < counts[c]; ++i) {
            for (std::size_t k = 0; k < spec.input_dim; ++k) {
                samples.push_back(static_cast<float>(means[c][k] + noise(rng)));
            }
            labels.push_back(static_cast<std::uint32_t>(c));
        }
    }
    return Dataset(std::move(samples), spec.input_dim, std::move(labels), counts);
}

}  // namespace

Dataset synth_gaussian_mixture(const DatasetSpec& spec) {
    spec.validate();
    auto counts = make_longtail_counts(spec.num_classes, spec.max_count, spec.imbalance_factor);
    return synth_from_counts(spec, counts, "train-samples");
}

Dataset synth_balanced_eval(const DatasetSpec& spec, std::size_t per_class) {
    spec.validate();
    if (per_class == 0) throw SpecError("per_class must be >= 1");
    std::vector<std::uint64_t> counts(spec.num_classes, per_class);
    return synth_from_counts(spec, counts, "eval-samples");
}

void AugmentConfig::validate() const {
    if (!std::isfinite(noise_std) || noise_std < 0.0) throw SpecError("noise_std must be >= 0");
    if (!std::isfinite(scale_jitter) || scale_jitter < 0.0 || scale_jitter >= 1.0) {
        throw SpecError("scale_jitter must be in [0,1)");
    }
    if (!std::isfinite(mask_prob) || mask_prob < 0.0 || mask_prob >= 1.0) {
        throw SpecError("mask_prob must be in [0,1)");
    }
    if (noise_std == 0.0 && scale_jitter == 0.0 && mask_prob == 0.0) {
        throw SpecError("augmentation must be stochastic: set at least one field > 0");
    }
}

std::vector<double> augment_view(std::span<const float> x, const AugmentConfig& cfg,
                                 std::mt19937_64& rng) {
    std::vector<double> out(x.size());
    double s = 1.0;
    if (cfg.scale_jitter > 0.0) {
        std::uniform_real_distribution<double> jitter(1.0 - cfg.scale_jitter, 1.0 + cfg.scale_jitter);
        s = jitter(rng);
    }
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = s * static_cast<double>(x[i]);
    if (cfg.noise_std > 0.0) {
        std::normal_distribution<double> noise(0.0, cfg.noise_std);
        for (double& v : out) v += noise(rng);
    }
    if (cfg.mask_prob > 0.0) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (double& v : out) {
            if (u(rng) < cfg.mask_prob) v = 0.0;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& in, T& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw FormatError("dataset file truncated");
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open for writing: " + path);
    out.write(kMagic, 4);
    write_pod(out, kVersion);
    write_pod(out, static_cast<std::uint64_t>(ds.size()));
    write_pod(out, static_cast<std::uint64_t>(ds.dim()));
    write_pod(out, static_cast<std::uint64_t>(ds.num_classes()));
    for (std::uint64_t c : ds.per_class_counts()) write_pod(out, c);
    for (std::uint32_t y : ds.labels_) write_pod(out, y);
    const auto& samples = ds.raw_samples();
    out.write(reinterpret_cast<const char*>(samples.data()),
              static_cast<std::streamsize>(samples.size() * sizeof(float)));
    if (!out) throw FormatError("short write: " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad magic in " + path);
    std::uint32_t version;
    read_pod(in, version);
    if (version != kVersion) throw FormatError("unsupported dataset version");
    std::uint64_t n, dim, c;
    read_pod(in, n);
    read_pod(in, dim);
    read_pod(in, c);
    if (n == 0 || dim == 0 || c < 3 || n * dim > (1ull << 34)) throw FormatError("implausible dataset header");

    std::vector<std::uint64_t> counts(c);
    for (auto& v : counts) read_pod(in, v);
    std::vector<std::uint32_t> labels(n);
    for (auto& v : labels) read_pod(in, v);
    std::vector<float> samples(n * dim);
    in.read(reinterpret_cast<char*>(samples.data()),
            static_cast<std::streamsize>(samples.size() * sizeof(float)));
    if (!in) throw FormatError("dataset file truncated");

    std::uint64_t total = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (i > 0 && counts[i] > counts[i - 1]) throw FormatError("counts not non-increasing");
        total += counts[i];
    }
    if (total != n) throw FormatError("per-class counts do not sum to N");

    try {
        return Dataset(std::move(samples), dim, std::move(labels), std::move(counts));
    } catch (const ContractError& e) {
        throw FormatError(std::string("invalid dataset contents: ") + e.what());
    }
}

}  // namespace fassl::data
