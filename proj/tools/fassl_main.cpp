// Command-line front end: dataset synthesis, the two pretraining stages,
// linear-probe evaluation, prototype diagnostics, full pipeline runs and
// hyperparameter sweeps.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fassl/checkpoint.hpp"
#include "fassl/config.hpp"
#include "fassl/dataset.hpp"
#include "fassl/errors.hpp"
#include "fassl/eval.hpp"
#include "fassl/kernels.hpp"
#include "fassl/pipeline.hpp"
#include "fassl/prototype_stage.hpp"
#include "fassl/rebalance_stage.hpp"
#include "fassl/rng.hpp"

namespace {

using json = nlohmann::json;
using namespace fassl;

void write_json(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
}

std::vector<double> parse_values(const std::string& csv) {
    std::vector<double> values;
    std::size_t pos = 0;
    while (pos < csv.size()) {
        std::size_t comma = csv.find(',', pos);
        if (comma == std::string::npos) comma = csv.size();
        values.push_back(std::stod(csv.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    return values;
}

struct PipelineCliArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
    std::string ablation;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

pipeline::RunConfig build_run_config(const PipelineCliArgs& args) {
    KvConfig kv;
    if (!args.config_path.empty()) kv = KvConfig::parse_file(args.config_path);
    for (const std::string& kvpair : args.overrides) {
        const auto eq = kvpair.find('=');
        if (eq == std::string::npos) throw SpecError("--set expects key=value, got: " + kvpair);
        kv.set(kvpair.substr(0, eq), kvpair.substr(eq + 1));
    }
    pipeline::RunConfig cfg = pipeline::RunConfig::from_kv(kv);
    if (args.seed_set) cfg.seed = args.seed;
    if (args.ablation == "uniform-weights") {
        cfg.reb.uniform_weights = true;
    } else if (args.ablation == "alternate-training") {
        if (cfg.alternate_rounds == 0) cfg.alternate_rounds = 4;
    } else if (!args.ablation.empty()) {
        throw SpecError("unknown ablation: " + args.ablation);
    }
    return cfg;
}

void add_pipeline_options(CLI::App* cmd, PipelineCliArgs& args) {
    cmd->add_option("--config", args.config_path, "flat key = value config file");
    cmd->add_option("--set", args.overrides, "override a config key, e.g. --set proto.k=256")
        ->take_all();
    cmd->add_option("--out", args.out_dir, "output directory")->required();
    cmd->add_option("--seed", args.seed, "run seed (overrides config)")
        ->each([&](const std::string&) { args.seed_set = true; });
    cmd->add_option("--ablation", args.ablation, "uniform-weights | alternate-training");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fassl: frequency-aware self-supervised learning on long-tailed vector data"};
    app.require_subcommand(1);

    // ---- synth-data ----------------------------------------------------------
    auto* synth = app.add_subcommand("synth-data", "synthesize a long-tailed Gaussian-mixture dataset");
    data::DatasetSpec spec;
    spec.num_classes = 9;
    spec.max_count = 200;
    spec.imbalance_factor = 100.0;
    spec.input_dim = 16;
    spec.cluster_separation = 3.0;
    spec.cluster_noise = 1.0;
    spec.seed = 1;
    std::string synth_out, synth_test_out;
    std::size_t synth_test_per_class = 50;
    synth->add_option("--classes", spec.num_classes, "number of classes (>= 3)");
    synth->add_option("--max-count", spec.max_count, "samples in the most frequent class");
    synth->add_option("--rho", spec.imbalance_factor, "imbalance factor (max count / min count)");
    synth->add_option("--dim", spec.input_dim, "input dimensionality");
    synth->add_option("--sep", spec.cluster_separation, "minimum distance between class means");
    synth->add_option("--noise", spec.cluster_noise, "within-class stddev");
    synth->add_option("--seed", spec.seed, "generation seed");
    synth->add_option("--out", synth_out, "output dataset file")->required();
    synth->add_option("--test-out", synth_test_out, "optional balanced held-out set");
    synth->add_option("--test-per-class", synth_test_per_class, "held-out samples per class");

    // ---- pretrain-proto ------------------------------------------------------
    auto* pproto = app.add_subcommand("pretrain-proto", "stage 1: frequency-aware prototype learning");
    std::string pp_data, pp_init, pp_out_teacher, pp_out_protos, pp_out_metrics;
    proto::ProtoStageConfig pp_cfg;
    std::uint64_t pp_seed = 1;
    std::size_t pp_enc_hidden = 64, pp_feat_dim = 32;
    data::AugmentConfig pp_aug{0.1, 0.05, 0.0};
    pproto->add_option("--data", pp_data, "training dataset file")->required();
    pproto->add_option("--k", pp_cfg.k, "number of prototypes");
    pproto->add_option("--beta", pp_cfg.beta, "contrastive temperature");
    pproto->add_option("--epochs", pp_cfg.epochs, "training epochs");
    pproto->add_option("--lr", pp_cfg.lr, "learning rate");
    pproto->add_option("--batch", pp_cfg.batch_size, "batch size (>= 2)");
    pproto->add_option("--seed", pp_seed, "stage seed");
    pproto->add_option("--init", pp_init, "teacher init checkpoint (default: random init)");
    pproto->add_option("--enc-hidden", pp_enc_hidden, "encoder hidden width");
    pproto->add_option("--feat-dim", pp_feat_dim, "feature dimension D");
    pproto->add_option("--aug-noise", pp_aug.noise_std, "augmentation noise stddev");
    pproto->add_option("--aug-jitter", pp_aug.scale_jitter, "augmentation scale jitter");
    pproto->add_option("--aug-mask", pp_aug.mask_prob, "augmentation mask probability");
    pproto->add_option("--out-teacher", pp_out_teacher, "teacher checkpoint path")->required();
    pproto->add_option("--out-protos", pp_out_protos, "prototype checkpoint path")->required();
    pproto->add_option("--out-metrics", pp_out_metrics, "metrics JSON path");

    // ---- pretrain-rebalance --------------------------------------------------
    auto* preb = app.add_subcommand("pretrain-rebalance", "stage 2: prototypical re-balanced SSL");
    std::string rb_data, rb_teacher, rb_protos, rb_out_student, rb_out_teacher, rb_out_metrics;
    rebalance::RebalanceConfig rb_cfg;
    std::uint64_t rb_seed = 1;
    std::size_t rb_head_hidden = 64;
    data::AugmentConfig rb_aug{0.1, 0.05, 0.0};
    preb->add_option("--data", rb_data, "training dataset file")->required();
    preb->add_option("--teacher", rb_teacher, "stage-1 teacher checkpoint")->required();
    preb->add_option("--protos", rb_protos, "stage-1 prototype checkpoint")->required();
    preb->add_option("--tau", rb_cfg.tau, "teacher EMA decay");
    preb->add_option("--lr", rb_cfg.lr, "student learning rate");
    preb->add_option("--epochs", rb_cfg.epochs, "training epochs");
    preb->add_option("--batch", rb_cfg.batch_size, "batch size");
    preb->add_option("--seed", rb_seed, "stage seed");
    preb->add_option("--clip-q", rb_cfg.clip_quantile, "weight clip quantile");
    preb->add_flag("--uniform-weights", rb_cfg.uniform_weights, "ablation: phi == 1");
    preb->add_option("--head-hidden", rb_head_hidden, "projection head hidden width");
    preb->add_option("--aug-noise", rb_aug.noise_std, "augmentation noise stddev");
    preb->add_option("--aug-jitter", rb_aug.scale_jitter, "augmentation scale jitter");
    preb->add_option("--aug-mask", rb_aug.mask_prob, "augmentation mask probability");
    preb->add_option("--out-student", rb_out_student, "student checkpoint path")->required();
    preb->add_option("--out-teacher", rb_out_teacher, "final teacher checkpoint path")->required();
    preb->add_option("--out-metrics", rb_out_metrics, "metrics JSON path");

    // ---- eval-linear ---------------------------------------------------------
    auto* evalc = app.add_subcommand("eval-linear", "linear probe on frozen features");
    std::string ev_ckpt, ev_data, ev_test_data, ev_out;
    double ev_fraction = 1.0, ev_lr = 0.5;
    std::size_t ev_epochs = 0;
    std::uint64_t ev_seed = 1;
    evalc->add_option("--features-from", ev_ckpt, "encoder checkpoint")->required();
    evalc->add_option("--data", ev_data, "probe training dataset")->required();
    evalc->add_option("--test-data", ev_test_data, "held-out dataset (default: score training data)");
    evalc->add_option("--fraction", ev_fraction, "labeled fraction for few-shot probing");
    evalc->add_option("--epochs", ev_epochs, "probe epochs (0 = auto: 30 standard / 100 few-shot)");
    evalc->add_option("--lr", ev_lr, "probe learning rate");
    evalc->add_option("--seed", ev_seed, "few-shot subset seed");
    evalc->add_option("--out", ev_out, "metrics JSON path")->required();

    // ---- analyze-prototypes --------------------------------------------------
    auto* analyze = app.add_subcommand("analyze-prototypes", "prototype class/group distribution");
    std::string an_protos, an_teacher, an_data, an_out;
    analyze->add_option("--protos", an_protos, "prototype checkpoint")->required();
    analyze->add_option("--teacher", an_teacher, "teacher checkpoint")->required();
    analyze->add_option("--data", an_data, "dataset file")->required();
    analyze->add_option("--out", an_out, "distribution JSON path")->required();

    // ---- run-pipeline / sweep ------------------------------------------------
    auto* runp = app.add_subcommand("run-pipeline", "synth -> stage 1 -> stage 2 -> eval -> analyze");
    PipelineCliArgs run_args;
    add_pipeline_options(runp, run_args);

    auto* sweepc = app.add_subcommand("sweep", "repeat the pipeline along one hyperparameter axis");
    PipelineCliArgs sweep_args;
    std::string sw_axis, sw_values;
    std::size_t sw_repeats = 1;
    add_pipeline_options(sweepc, sweep_args);
    sweepc->add_option("--axis", sw_axis, "K | tau | rho | fraction")->required();
    sweepc->add_option("--values", sw_values, "comma-separated axis values")->required();
    sweepc->add_option("--repeats", sw_repeats, "seeds per value");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            data::Dataset ds = data::synth_gaussian_mixture(spec);
            data::save_dataset(ds, synth_out);
            std::printf("wrote %s (N=%zu, C=%zu, dim=%zu)\n", synth_out.c_str(), ds.size(),
                        ds.num_classes(), ds.dim());
            if (!synth_test_out.empty()) {
                data::Dataset test = data::synth_balanced_eval(spec, synth_test_per_class);
                data::save_dataset(test, synth_test_out);
                std::printf("wrote %s (N=%zu)\n", synth_test_out.c_str(), test.size());
            }
        } else if (*pproto) {
            data::Dataset ds = data::load_dataset(pp_data);
            pp_cfg.seed = pp_seed;
            graph::ParamSet teacher_init;
            if (!pp_init.empty()) {
                teacher_init = nn::subset_by_prefix(ckpt::load_checkpoint(pp_init), "enc.");
            } else {
                nn::EncoderConfig enc{{ds.dim(), pp_enc_hidden, pp_feat_dim}};
                teacher_init = nn::init_mlp(enc, "enc", derive_seed(pp_seed, "teacher-init"));
            }
            proto::PrototypeBank bank =
                proto::init_prototypes(pp_cfg.k, nn::mlp_output_dim(teacher_init, "enc"),
                                       derive_seed(pp_seed, "protos-init"));
            proto::ProtoStageResult res = proto::train_prototype_stage(
                data::unlabeled(ds), pp_aug, pp_cfg, std::move(teacher_init), std::move(bank));
            ckpt::save_checkpoint(res.teacher, pp_out_teacher);
            ckpt::save_checkpoint(proto::bank_to_params(res.bank), pp_out_protos);
            if (!pp_out_metrics.empty()) {
                json j;
                j["epoch_loss"] = res.metrics.epoch_loss;
                j["skipped_batches"] = res.metrics.skipped_batches;
                j["wall_seconds"] = res.metrics.wall_seconds;
                j["seed"] = pp_seed;
                j["config"] = {{"k", pp_cfg.k},        {"beta", pp_cfg.beta},
                               {"epochs", pp_cfg.epochs}, {"lr", pp_cfg.lr},
                               {"batch", pp_cfg.batch_size}, {"init", pp_init},
                               {"data", pp_data},      {"aug_noise", pp_aug.noise_std},
                               {"aug_jitter", pp_aug.scale_jitter}, {"aug_mask", pp_aug.mask_prob}};
                write_json(pp_out_metrics, j);
            }
            std::printf("stage 1 done: %zu epochs, final loss %.6f\n", res.metrics.epoch_loss.size(),
                        res.metrics.epoch_loss.empty() ? 0.0 : res.metrics.epoch_loss.back());
        } else if (*preb) {
            data::Dataset ds = data::load_dataset(rb_data);
            rb_cfg.seed = rb_seed;
            graph::ParamSet teacher = ckpt::load_checkpoint(rb_teacher);
            proto::PrototypeBank bank = proto::bank_from_params(ckpt::load_checkpoint(rb_protos));
            nn::EncoderConfig head{{nn::mlp_output_dim(teacher, "enc"), rb_head_hidden,
                                    nn::mlp_output_dim(teacher, "enc")}};
            rebalance::RebalanceResult res = rebalance::train_rebalance_stage(
                data::unlabeled(ds), rb_aug, rb_cfg, std::move(teacher), bank, head);
            ckpt::save_checkpoint(res.student, rb_out_student);
            ckpt::save_checkpoint(res.teacher, rb_out_teacher);
            if (!rb_out_metrics.empty()) {
                json j;
                j["epoch_loss"] = res.metrics.epoch_loss;
                j["feature_std"] = res.metrics.feature_std;
                j["mean_weight"] = res.metrics.mean_weight;
                j["max_weight"] = res.metrics.max_weight;
                j["weight_histogram"] = res.metrics.weight_histogram;
                j["hist_upper"] = res.metrics.hist_upper;
                j["overflow_count"] = res.metrics.overflow_count;
                j["collapse_warnings"] = res.metrics.collapse_warnings;
                j["skipped_batches"] = res.metrics.skipped_batches;
                j["wall_seconds"] = res.metrics.wall_seconds;
                j["seed"] = rb_seed;
                j["config"] = {{"tau", rb_cfg.tau},       {"lr", rb_cfg.lr},
                               {"epochs", rb_cfg.epochs}, {"batch", rb_cfg.batch_size},
                               {"clip_q", rb_cfg.clip_quantile},
                               {"uniform_weights", rb_cfg.uniform_weights},
                               {"teacher", rb_teacher},   {"protos", rb_protos},
                               {"data", rb_data}};
                write_json(rb_out_metrics, j);
            }
            std::printf("stage 2 done: %zu epochs, final loss %.6f\n", res.metrics.epoch_loss.size(),
                        res.metrics.epoch_loss.empty() ? 0.0 : res.metrics.epoch_loss.back());
        } else if (*evalc) {
            graph::ParamSet encoder = ckpt::load_checkpoint(ev_ckpt);
            data::Dataset train_ds = data::load_dataset(ev_data);
            const std::size_t d = nn::mlp_output_dim(encoder, "enc");
            std::vector<double> feat = eval::extract_features(encoder, "enc", train_ds);
            std::vector<std::uint32_t> labels = eval::read_labels(train_ds);

            std::vector<std::size_t> train_idx;
            if (ev_fraction < 1.0) {
                train_idx = eval::few_shot_subset(labels, ev_fraction, ev_seed, train_ds.num_classes());
            } else {
                train_idx.resize(train_ds.size());
                std::iota(train_idx.begin(), train_idx.end(), 0);
            }
            const std::size_t epochs = ev_epochs ? ev_epochs : (ev_fraction < 1.0 ? 100 : 30);
            eval::LinearProbe probe = eval::train_linear_probe(
                feat, train_ds.size(), d, labels, train_idx, train_ds.num_classes(), epochs, ev_lr);

            eval::GroupMetrics gm;
            if (!ev_test_data.empty()) {
                data::Dataset test_ds = data::load_dataset(ev_test_data);
                std::vector<double> feat_test = eval::extract_features(encoder, "enc", test_ds);
                gm = eval::group_metrics(eval::probe_predict(probe, feat_test, test_ds.size()),
                                         eval::read_labels(test_ds), train_ds.group_of_class());
            } else {
                gm = eval::group_metrics(eval::probe_predict(probe, feat, train_ds.size()), labels,
                                         train_ds.group_of_class());
            }
            json j;
            j["acc_all"] = gm.acc_all;
            j["acc_overall"] = gm.acc_overall;
            j["acc_frequent"] = gm.acc_frequent;
            j["acc_medium"] = gm.acc_medium;
            j["acc_rare"] = gm.acc_rare;
            j["std_groups"] = gm.std_groups;
            j["seed"] = ev_seed;
            j["config"] = {{"features_from", ev_ckpt}, {"data", ev_data},   {"test_data", ev_test_data},
                           {"fraction", ev_fraction},  {"epochs", epochs},  {"lr", ev_lr},
                           {"probe_lr_used", probe.lr_used}, {"probe_retries", probe.retries}};
            write_json(ev_out, j);
            std::printf("acc_all %.2f (freq %.2f / med %.2f / rare %.2f, std %.2f)\n", gm.acc_all,
                        gm.acc_frequent, gm.acc_medium, gm.acc_rare, gm.std_groups);
        } else if (*analyze) {
            data::Dataset ds = data::load_dataset(an_data);
            graph::ParamSet teacher = ckpt::load_checkpoint(an_teacher);
            proto::PrototypeBank bank = proto::bank_from_params(ckpt::load_checkpoint(an_protos));
            std::vector<double> feat = eval::extract_features(teacher, "enc", ds);
            eval::ProtoDistribution dist = eval::prototype_class_distribution(bank, ds, feat);
            json j;
            j["pct_frequent"] = dist.pct_frequent;
            j["pct_medium"] = dist.pct_medium;
            j["pct_rare"] = dist.pct_rare;
            j["per_class_counts"] = dist.per_class_counts;
            j["nearest_sample"] = dist.nearest_sample;
            j["unassigned"] = dist.unassigned;
            write_json(an_out, j);
            std::printf("prototypes: frequent %.2f%% / medium %.2f%% / rare %.2f%%\n", dist.pct_frequent,
                        dist.pct_medium, dist.pct_rare);
        } else if (*runp) {
            pipeline::RunConfig cfg = build_run_config(run_args);
            pipeline::PipelineResult res = pipeline::run_pipeline(cfg, run_args.out_dir);
            std::printf("pipeline done: acc_all %.2f (rare %.2f), prototypes frequent %.2f%%\n",
                        res.metrics.acc_all, res.metrics.acc_rare, res.protos.pct_frequent);
        } else if (*sweepc) {
            pipeline::RunConfig cfg = build_run_config(sweep_args);
            auto rows = pipeline::sweep(cfg, sw_axis, parse_values(sw_values), sw_repeats,
                                        sweep_args.out_dir);
            for (const auto& row : rows) {
                std::printf("%s=%g: acc_all %.2f (rare %.2f), ok=%zu failed=%zu\n", sw_axis.c_str(),
                            row.value, row.mean.acc_all, row.mean.acc_rare, row.ok, row.failed);
            }
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
