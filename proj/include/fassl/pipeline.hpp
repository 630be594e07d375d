#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fassl/config.hpp"
#include "fassl/dataset.hpp"
#include "fassl/encoder.hpp"
#include "fassl/eval.hpp"
#include "fassl/metrics.hpp"
#include "fassl/prototype_stage.hpp"
#include "fassl/rebalance_stage.hpp"

// End-to-end orchestration: synth/load -> Stage 1 -> Stage 2 -> linear probe
// -> prototype analysis, all artifacts passed through files in the output
// directory so any stage can be re-run from the persisted state of the
// previous one. Sub-seeds are derived from the single run seed.

namespace fassl::pipeline {

struct RunConfig {
    // data.*
    std::string data_path;  // load this dataset instead of synthesizing
    std::size_t classes = 9;
    std::size_t max_count = 200;
    double rho = 100.0;
    std::size_t dim = 16;
    double sep = 3.0;
    double noise = 1.0;
    std::size_t test_per_class = 50;  // balanced held-out pool (synthetic data only)
    data::AugmentConfig aug{0.1, 0.05, 0.0};

    // model.*
    std::size_t enc_hidden = 64;
    std::size_t feat_dim = 32;
    std::size_t head_hidden = 64;

    // proto.* / rebalance.* (stage seeds are derived from the run seed)
    proto::ProtoStageConfig proto;
    std::string proto_init_ckpt;  // teacher warm start; empty = random init
    rebalance::RebalanceConfig reb;

    // eval.*
    double eval_fraction = 1.0;
    std::size_t eval_epochs = 0;  // 0 = auto (30 standard, 100 few-shot)
    double eval_lr = 0.5;

    std::uint64_t seed = 1;
    std::size_t alternate_rounds = 0;  // > 0 enables the alternate-training ablation

    static RunConfig from_kv(const KvConfig& kv);
    KvConfig to_kv() const;

    nn::EncoderConfig encoder_config(std::size_t input_dim) const;
    nn::EncoderConfig head_config() const;

    std::size_t probe_epochs() const;
};

struct PipelineResult {
    eval::GroupMetrics metrics;
    eval::ProtoDistribution protos;
    StageMetrics stage1, stage2;
    std::uint64_t label_reads_before_eval = 0;
    std::string out_dir;
};

// Individual file-driven stages; each reads its inputs from (and writes its
// outputs into) the run directory.
void pipeline_synth(const RunConfig& cfg, const std::string& out_dir);
StageMetrics pipeline_stage1(const RunConfig& cfg, const std::string& out_dir,
                             std::uint64_t* label_reads = nullptr);
StageMetrics pipeline_stage2(const RunConfig& cfg, const std::string& out_dir,
                             std::uint64_t* label_reads = nullptr);
eval::GroupMetrics pipeline_eval(const RunConfig& cfg, const std::string& out_dir,
                                 eval::LinearProbe* probe_out = nullptr);
eval::ProtoDistribution pipeline_analyze(const RunConfig& cfg, const std::string& out_dir);

// Runs every stage in order (no alternation unless cfg.alternate_rounds > 0),
// writes metrics.json (timing-free, byte-reproducible per seed) plus
// timing.json, and aborts with the failing stage recorded on error.
PipelineResult run_pipeline(const RunConfig& cfg, const std::string& out_dir);

struct SweepRow {
    double value = 0.0;
    std::size_t ok = 0;
    std::size_t failed = 0;
    eval::GroupMetrics mean;  // over successful repeats
    double mean_pct_frequent = 0.0;
    double mean_pct_medium = 0.0;
    double mean_pct_rare = 0.0;
};

// One row per axis value ("K", "tau", "rho" or "fraction"), `repeats` runs
// per value with paired seeds across values. Failed runs are recorded and the
// sweep continues. FASSL_THREADS caps run parallelism (default 1). Writes
// sweep.csv / sweep_runs.csv under out_dir.
std::vector<SweepRow> sweep(const RunConfig& base, const std::string& axis,
                            const std::vector<double>& values, std::size_t repeats,
                            const std::string& out_dir);

}  // namespace fassl::pipeline
