#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

// Synthetic long-tailed vector datasets: exponential count profiles with a
// configurable imbalance factor, Gaussian-mixture samples, stochastic
// augmented views, and Frequent/Medium/Rare group assignment.

namespace fassl::data {

enum class Group : std::uint8_t { frequent = 0, medium = 1, rare = 2 };

const char* group_name(Group g);

struct DatasetSpec {
    std::size_t num_classes = 0;
    std::size_t max_count = 0;
    double imbalance_factor = 1.0;  // most frequent count / least frequent count
    std::size_t input_dim = 0;
    double cluster_separation = 1.0;  // min distance between class means
    double cluster_noise = 1.0;       // within-class stddev per coordinate
    std::uint64_t seed = 0;

    void validate() const;
};

// counts[c] = round(max_count * rho^(-c / (C-1))), clamped below at 1.
std::vector<std::uint64_t> make_longtail_counts(std::size_t num_classes, std::size_t max_count,
                                                double rho);

// Classes sorted by count descending, split into three contiguous blocks with
// sizes as equal as possible; remainders go to Frequent first, then Medium.
std::vector<Group> partition_groups(const std::vector<std::uint64_t>& per_class_counts);

// Labeled samples. Sample storage is float32 row-major, matching the on-disk
// layout bit for bit. Label reads are counted so the pipeline can prove the
// pretraining stages never touched them.
class Dataset {
public:
    Dataset() = default;
    Dataset(std::vector<float> samples, std::size_t dim, std::vector<std::uint32_t> labels,
            std::vector<std::uint64_t> per_class_counts);

    std::size_t size() const { return n_; }
    std::size_t dim() const { return dim_; }
    std::size_t num_classes() const { return per_class_counts_.size(); }

    std::span<const float> sample(std::size_t i) const { return {samples_.data() + i * dim_, dim_}; }
    const std::vector<float>& raw_samples() const { return samples_; }

    std::uint32_t label(std::size_t i) const {
        ++label_reads_;
        return labels_[i];
    }
    std::uint64_t label_read_count() const { return label_reads_; }

    const std::vector<std::uint64_t>& per_class_counts() const { return per_class_counts_; }
    const std::vector<Group>& group_of_class() const { return groups_; }

private:
    // serialization copies the label block without touching the read counter
    friend void save_dataset(const Dataset& ds, const std::string& path);

    std::vector<float> samples_;
    std::size_t n_ = 0, dim_ = 0;
    std::vector<std::uint32_t> labels_;
    std::vector<std::uint64_t> per_class_counts_;
    std::vector<Group> groups_;
    mutable std::uint64_t label_reads_ = 0;
};

// What the pretraining stages are allowed to see: samples only.
struct UnlabeledView {
    const float* samples = nullptr;
    std::size_t n = 0;
    std::size_t dim = 0;

    std::span<const float> sample(std::size_t i) const { return {samples + i * dim, dim}; }
};

inline UnlabeledView unlabeled(const Dataset& ds) {
    return {ds.raw_samples().data(), ds.size(), ds.dim()};
}

// Class means are placed on a sphere of radius cluster_separation by seeded
// rejection sampling (min pairwise distance >= cluster_separation); samples
// are mean + N(0, noise^2 I). Deterministic per seed.
Dataset synth_gaussian_mixture(const DatasetSpec& spec);

// Balanced companion set drawn from the same class means (same seed stream
// for mean placement, an independent stream for sample noise). Used as the
// held-out evaluation pool.
Dataset synth_balanced_eval(const DatasetSpec& spec, std::size_t per_class);

struct AugmentConfig {
    double noise_std = 0.0;     // additive Gaussian noise
    double scale_jitter = 0.0;  // multiplicative jitter half-range, in [0,1)
    double mask_prob = 0.0;     // per-coordinate zeroing probability, in [0,1)

    void validate() const;  // all finite, at least one strictly positive
};

// x' = mask .* (s*x + eps): s ~ U(1-j, 1+j), eps ~ N(0, noise_std^2 I),
// mask coordinates dropped independently with mask_prob.
std::vector<double> augment_view(std::span<const float> x, const AugmentConfig& cfg,
                                 std::mt19937_64& rng);

// Binary, little-endian: magic "FASL", version u32=1, N u64, dim u64, C u64,
// counts C*u64, labels N*u32, samples N*dim float32 row-major.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace fassl::data
