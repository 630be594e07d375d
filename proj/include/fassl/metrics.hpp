#pragma once

#include <cstdint>
#include <vector>

namespace fassl {

// Per-stage training record. Stage 1 fills the loss curve and skip counters;
// Stage 2 additionally tracks weight statistics and the collapse monitor.
struct StageMetrics {
    std::vector<double> epoch_loss;

    // stage 2 only
    std::vector<double> feature_std;  // per-epoch mean batch feature std
    std::vector<double> mean_weight;
    std::vector<double> max_weight;
    std::vector<std::uint64_t> weight_histogram;  // 16 bins over [0, hist_upper]
    double hist_upper = 0.0;

    std::uint64_t skipped_batches = 0;
    std::uint64_t collapse_warnings = 0;  // guarded l2-normalize activations
    std::uint64_t collapse_epochs = 0;    // epochs with feature std < 1e-6
    std::uint64_t overflow_count = 0;     // rarity-weight exponent clamps
    double wall_seconds = 0.0;
};

}  // namespace fassl
