#include "fassl/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "fassl/checkpoint.hpp"
#include "fassl/errors.hpp"
#include "fassl/rng.hpp"

namespace fassl::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// RunConfig <-> flat keys

RunConfig RunConfig::from_kv(const KvConfig& kv) {
    RunConfig c;
    c.data_path = kv.get_str("data.path", c.data_path);
    c.classes = kv.get_u64("data.classes", c.classes);
    c.max_count = kv.get_u64("data.max_count", c.max_count);
    c.rho = kv.get_double("data.rho", c.rho);
    c.dim = kv.get_u64("data.dim", c.dim);
    c.sep = kv.get_double("data.sep", c.sep);
    c.noise = kv.get_double("data.noise", c.noise);
    c.test_per_class = kv.get_u64("data.test_per_class", c.test_per_class);
    c.aug.noise_std = kv.get_double("data.aug_noise", c.aug.noise_std);
    c.aug.scale_jitter = kv.get_double("data.aug_jitter", c.aug.scale_jitter);
    c.aug.mask_prob = kv.get_double("data.aug_mask", c.aug.mask_prob);

    c.enc_hidden = kv.get_u64("model.enc_hidden", c.enc_hidden);
    c.feat_dim = kv.get_u64("model.feat_dim", c.feat_dim);
    c.head_hidden = kv.get_u64("model.head_hidden", c.head_hidden);

    c.proto.k = kv.get_u64("proto.k", c.proto.k);
    c.proto.beta = kv.get_double("proto.beta", c.proto.beta);
    c.proto.batch_size = kv.get_u64("proto.batch", c.proto.batch_size);
    c.proto.epochs = kv.get_u64("proto.epochs", c.proto.epochs);
    c.proto.lr = kv.get_double("proto.lr", c.proto.lr);
    c.proto.momentum = kv.get_double("proto.momentum", c.proto.momentum);
    c.proto_init_ckpt = kv.get_str("proto.init", c.proto_init_ckpt);

    c.reb.tau = kv.get_double("rebalance.tau", c.reb.tau);
    c.reb.lr = kv.get_double("rebalance.lr", c.reb.lr);
    c.reb.momentum = kv.get_double("rebalance.momentum", c.reb.momentum);
    c.reb.batch_size = kv.get_u64("rebalance.batch", c.reb.batch_size);
    c.reb.epochs = kv.get_u64("rebalance.epochs", c.reb.epochs);
    c.reb.clip_quantile = kv.get_double("rebalance.clip_q", c.reb.clip_quantile);
    c.reb.uniform_weights = kv.get_bool("rebalance.uniform_weights", c.reb.uniform_weights);

    c.eval_fraction = kv.get_double("eval.fraction", c.eval_fraction);
    c.eval_epochs = kv.get_u64("eval.epochs", c.eval_epochs);
    c.eval_lr = kv.get_double("eval.lr", c.eval_lr);

    c.seed = kv.get_u64("seed", c.seed);
    c.alternate_rounds = kv.get_u64("alternate_rounds", c.alternate_rounds);
    return c;
}

namespace {
std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
}  // namespace

KvConfig RunConfig::to_kv() const {
    KvConfig kv;
    kv.set("data.path", data_path);
    kv.set("data.classes", std::to_string(classes));
    kv.set("data.max_count", std::to_string(max_count));
    kv.set("data.rho", fmt_double(rho));
    kv.set("data.dim", std::to_string(dim));
    kv.set("data.sep", fmt_double(sep));
    kv.set("data.noise", fmt_double(noise));
    kv.set("data.test_per_class", std::to_string(test_per_class));
    kv.set("data.aug_noise", fmt_double(aug.noise_std));
    kv.set("data.aug_jitter", fmt_double(aug.scale_jitter));
    kv.set("data.aug_mask", fmt_double(aug.mask_prob));
    kv.set("model.enc_hidden", std::to_string(enc_hidden));
    kv.set("model.feat_dim", std::to_string(feat_dim));
    kv.set("model.head_hidden", std::to_string(head_hidden));
    kv.set("proto.k", std::to_string(proto.k));
    kv.set("proto.beta", fmt_double(proto.beta));
    kv.set("proto.batch", std::to_string(proto.batch_size));
    kv.set("proto.epochs", std::to_string(proto.epochs));
    kv.set("proto.lr", fmt_double(proto.lr));
    kv.set("proto.momentum", fmt_double(proto.momentum));
    kv.set("proto.init", proto_init_ckpt);
    kv.set("rebalance.tau", fmt_double(reb.tau));
    kv.set("rebalance.lr", fmt_double(reb.lr));
    kv.set("rebalance.momentum", fmt_double(reb.momentum));
    kv.set("rebalance.batch", std::to_string(reb.batch_size));
    kv.set("rebalance.epochs", std::to_string(reb.epochs));
    kv.set("rebalance.clip_q", fmt_double(reb.clip_quantile));
    kv.set("rebalance.uniform_weights", reb.uniform_weights ? "true" : "false");
    kv.set("eval.fraction", fmt_double(eval_fraction));
    kv.set("eval.epochs", std::to_string(eval_epochs));
    kv.set("eval.lr", fmt_double(eval_lr));
    kv.set("seed", std::to_string(seed));
    kv.set("alternate_rounds", std::to_string(alternate_rounds));
    return kv;
}

nn::EncoderConfig RunConfig::encoder_config(std::size_t input_dim) const {
    return nn::EncoderConfig{{input_dim, enc_hidden, feat_dim}};
}

nn::EncoderConfig RunConfig::head_config() const {
    return nn::EncoderConfig{{feat_dim, head_hidden, feat_dim}};
}

std::size_t RunConfig::probe_epochs() const {
    if (eval_epochs > 0) return eval_epochs;
    return eval_fraction < 1.0 ? 100 : 30;
}

// ---------------------------------------------------------------------------
// Stage implementations (file-driven)

namespace {

std::string dataset_file(const std::string& dir) { return dir + "/dataset.fasl"; }
std::string eval_dataset_file(const std::string& dir) { return dir + "/dataset_eval.fasl"; }
std::string teacher1_file(const std::string& dir) { return dir + "/teacher_stage1.fasc"; }
std::string protos_file(const std::string& dir) { return dir + "/protos.fasc"; }
std::string student_file(const std::string& dir) { return dir + "/student.fasc"; }
std::string teacher_final_file(const std::string& dir) { return dir + "/teacher_final.fasc"; }

data::DatasetSpec dataset_spec(const RunConfig& cfg) {
    data::DatasetSpec spec;
    spec.num_classes = cfg.classes;
    spec.max_count = cfg.max_count;
    spec.imbalance_factor = cfg.rho;
    spec.input_dim = cfg.dim;
    spec.cluster_separation = cfg.sep;
    spec.cluster_noise = cfg.noise;
    spec.seed = derive_seed(cfg.seed, "data");
    return spec;
}

graph::ParamSet stage1_teacher_init(const RunConfig& cfg, std::size_t input_dim) {
    if (!cfg.proto_init_ckpt.empty()) {
        graph::ParamSet loaded = ckpt::load_checkpoint(cfg.proto_init_ckpt);
        nn::mlp_layer_count(loaded, "enc");  // must contain an encoder
        return nn::subset_by_prefix(loaded, "enc.");
    }
    return nn::init_mlp(cfg.encoder_config(input_dim), "enc", derive_seed(cfg.seed, "teacher-init"));
}

proto::ProtoStageConfig stage1_config(const RunConfig& cfg) {
    proto::ProtoStageConfig c = cfg.proto;
    c.seed = derive_seed(cfg.seed, "stage1");
    return c;
}

rebalance::RebalanceConfig stage2_config(const RunConfig& cfg) {
    rebalance::RebalanceConfig c = cfg.reb;
    c.seed = derive_seed(cfg.seed, "stage2");
    return c;
}

json metrics_json(const StageMetrics& m, bool stage2) {
    json j;
    j["epoch_loss"] = m.epoch_loss;
    j["skipped_batches"] = m.skipped_batches;
    j["collapse_warnings"] = m.collapse_warnings;
    if (stage2) {
        j["feature_std"] = m.feature_std;
        j["mean_weight"] = m.mean_weight;
        j["max_weight"] = m.max_weight;
        j["weight_histogram"] = m.weight_histogram;
        j["hist_upper"] = m.hist_upper;
        j["overflow_count"] = m.overflow_count;
        j["collapse_epochs"] = m.collapse_epochs;
    }
    return j;
}

json group_metrics_json(const eval::GroupMetrics& g) {
    return json{{"acc_all", g.acc_all},
                {"acc_overall", g.acc_overall},
                {"acc_frequent", g.acc_frequent},
                {"acc_medium", g.acc_medium},
                {"acc_rare", g.acc_rare},
                {"std_groups", g.std_groups}};
}

json proto_dist_json(const eval::ProtoDistribution& d) {
    return json{{"pct_frequent", d.pct_frequent},
                {"pct_medium", d.pct_medium},
                {"pct_rare", d.pct_rare},
                {"per_class_counts", d.per_class_counts},
                {"unassigned", d.unassigned}};
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open for writing: " + path);
    out << text;
    if (!out) throw FormatError("short write: " + path);
}

}  // namespace

void pipeline_synth(const RunConfig& cfg, const std::string& out_dir) {
    if (!cfg.data_path.empty()) {
        data::Dataset ds = data::load_dataset(cfg.data_path);  // validate before adopting
        data::save_dataset(ds, dataset_file(out_dir));
        return;  // no matched held-out pool for external data; eval falls back to the training pool
    }
    data::DatasetSpec spec = dataset_spec(cfg);
    data::save_dataset(data::synth_gaussian_mixture(spec), dataset_file(out_dir));
    data::save_dataset(data::synth_balanced_eval(spec, cfg.test_per_class), eval_dataset_file(out_dir));
}

StageMetrics pipeline_stage1(const RunConfig& cfg, const std::string& out_dir,
                             std::uint64_t* label_reads) {
    data::Dataset ds = data::load_dataset(dataset_file(out_dir));
    proto::ProtoStageConfig scfg = stage1_config(cfg);
    proto::PrototypeBank bank =
        proto::init_prototypes(scfg.k, cfg.feat_dim, derive_seed(cfg.seed, "protos-init"));
    proto::ProtoStageResult res = proto::train_prototype_stage(
        data::unlabeled(ds), cfg.aug, scfg, stage1_teacher_init(cfg, ds.dim()), std::move(bank));
    ckpt::save_checkpoint(res.teacher, teacher1_file(out_dir));
    ckpt::save_checkpoint(proto::bank_to_params(res.bank), protos_file(out_dir));
    if (label_reads) *label_reads += ds.label_read_count();
    return res.metrics;
}

StageMetrics pipeline_stage2(const RunConfig& cfg, const std::string& out_dir,
                             std::uint64_t* label_reads) {
    data::Dataset ds = data::load_dataset(dataset_file(out_dir));
    graph::ParamSet teacher = ckpt::load_checkpoint(teacher1_file(out_dir));
    proto::PrototypeBank bank = proto::bank_from_params(ckpt::load_checkpoint(protos_file(out_dir)));
    rebalance::RebalanceResult res = rebalance::train_rebalance_stage(
        data::unlabeled(ds), cfg.aug, stage2_config(cfg), std::move(teacher), bank, cfg.head_config());
    ckpt::save_checkpoint(res.student, student_file(out_dir));
    ckpt::save_checkpoint(res.teacher, teacher_final_file(out_dir));
    if (label_reads) *label_reads += ds.label_read_count();
    return res.metrics;
}

eval::GroupMetrics pipeline_eval(const RunConfig& cfg, const std::string& out_dir,
                                 eval::LinearProbe* probe_out) {
    graph::ParamSet student = ckpt::load_checkpoint(student_file(out_dir));
    data::Dataset train_ds = data::load_dataset(dataset_file(out_dir));

    std::vector<double> feat_train = eval::extract_features(student, "enc", train_ds);
    std::vector<std::uint32_t> labels_train = eval::read_labels(train_ds);

    std::vector<std::size_t> train_idx;
    if (cfg.eval_fraction < 1.0) {
        train_idx = eval::few_shot_subset(labels_train, cfg.eval_fraction,
                                          derive_seed(cfg.seed, "eval-subset"), train_ds.num_classes());
    } else {
        train_idx.resize(train_ds.size());
        std::iota(train_idx.begin(), train_idx.end(), 0);
    }

    eval::LinearProbe probe = eval::train_linear_probe(feat_train, train_ds.size(), cfg.feat_dim,
                                                       labels_train, train_idx, train_ds.num_classes(),
                                                       cfg.probe_epochs(), cfg.eval_lr);

    eval::GroupMetrics gm;
    if (fs::exists(eval_dataset_file(out_dir))) {
        data::Dataset test_ds = data::load_dataset(eval_dataset_file(out_dir));
        std::vector<double> feat_test = eval::extract_features(student, "enc", test_ds);
        std::vector<std::uint32_t> labels_test = eval::read_labels(test_ds);
        // groups come from the *training* frequency profile
        gm = eval::group_metrics(eval::probe_predict(probe, feat_test, test_ds.size()), labels_test,
                                 train_ds.group_of_class());
    } else {
        gm = eval::group_metrics(eval::probe_predict(probe, feat_train, train_ds.size()), labels_train,
                                 train_ds.group_of_class());
    }

    eval::export_embeddings(feat_train, train_ds.size(), cfg.feat_dim, labels_train,
                            out_dir + "/embeddings.csv");
    if (probe_out) *probe_out = std::move(probe);
    return gm;
}

eval::ProtoDistribution pipeline_analyze(const RunConfig& cfg, const std::string& out_dir) {
    (void)cfg;
    data::Dataset ds = data::load_dataset(dataset_file(out_dir));
    graph::ParamSet teacher = ckpt::load_checkpoint(teacher1_file(out_dir));
    proto::PrototypeBank bank = proto::bank_from_params(ckpt::load_checkpoint(protos_file(out_dir)));
    std::vector<double> features = eval::extract_features(teacher, "enc", ds);
    return eval::prototype_class_distribution(bank, ds, features);
}

namespace {

// Alternate-training ablation: interleave short Stage 1 / Stage 2 rounds in
// memory, then persist the same artifact set as the standard path.
void run_alternating(const RunConfig& cfg, const std::string& out_dir, StageMetrics& m1,
                     StageMetrics& m2, std::uint64_t* label_reads) {
    data::Dataset ds = data::load_dataset(dataset_file(out_dir));
    data::UnlabeledView view = data::unlabeled(ds);

    const std::size_t rounds = cfg.alternate_rounds;
    proto::ProtoStageConfig s1 = stage1_config(cfg);
    rebalance::RebalanceConfig s2 = stage2_config(cfg);
    const std::size_t e1 = std::max<std::size_t>(1, s1.epochs / rounds);
    const std::size_t e2 = std::max<std::size_t>(1, s2.epochs / rounds);

    graph::ParamSet teacher = stage1_teacher_init(cfg, ds.dim());
    proto::PrototypeBank bank =
        proto::init_prototypes(s1.k, cfg.feat_dim, derive_seed(cfg.seed, "protos-init"));
    graph::ParamSet student;
    bool have_student = false;

    auto append = [](StageMetrics& into, const StageMetrics& part) {
        into.epoch_loss.insert(into.epoch_loss.end(), part.epoch_loss.begin(), part.epoch_loss.end());
        into.feature_std.insert(into.feature_std.end(), part.feature_std.begin(), part.feature_std.end());
        into.mean_weight.insert(into.mean_weight.end(), part.mean_weight.begin(), part.mean_weight.end());
        into.max_weight.insert(into.max_weight.end(), part.max_weight.begin(), part.max_weight.end());
        if (into.weight_histogram.empty()) {
            into.weight_histogram = part.weight_histogram;
            into.hist_upper = part.hist_upper;
        } else {
            for (std::size_t i = 0; i < part.weight_histogram.size(); ++i) {
                into.weight_histogram[i] += part.weight_histogram[i];
            }
        }
        into.skipped_batches += part.skipped_batches;
        into.collapse_warnings += part.collapse_warnings;
        into.collapse_epochs += part.collapse_epochs;
        into.overflow_count += part.overflow_count;
        into.wall_seconds += part.wall_seconds;
    };

    for (std::size_t r = 0; r < rounds; ++r) {
        proto::ProtoStageConfig rcfg1 = s1;
        rcfg1.epochs = e1;
        rcfg1.seed = derive_seed(s1.seed, "round", r);
        proto::ProtoStageResult pr =
            proto::train_prototype_stage(view, cfg.aug, rcfg1, std::move(teacher), std::move(bank));
        teacher = std::move(pr.teacher);
        bank = std::move(pr.bank);
        append(m1, pr.metrics);

        rebalance::RebalanceConfig rcfg2 = s2;
        rcfg2.epochs = e2;
        rcfg2.seed = derive_seed(s2.seed, "round", r);
        rebalance::RebalanceResult rr =
            rebalance::train_rebalance_stage(view, cfg.aug, rcfg2, std::move(teacher), bank,
                                             cfg.head_config(), have_student ? &student : nullptr);
        teacher = std::move(rr.teacher);
        student = std::move(rr.student);
        have_student = true;
        append(m2, rr.metrics);
    }

    ckpt::save_checkpoint(teacher, teacher1_file(out_dir));
    ckpt::save_checkpoint(proto::bank_to_params(bank), protos_file(out_dir));
    ckpt::save_checkpoint(student, student_file(out_dir));
    ckpt::save_checkpoint(teacher, teacher_final_file(out_dir));
    if (label_reads) *label_reads += ds.label_read_count();
}

}  // namespace

PipelineResult run_pipeline(const RunConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    write_text(out_dir + "/config.cfg", cfg.to_kv().serialize());

    PipelineResult result;
    result.out_dir = out_dir;

    json metrics;
    metrics["seed"] = cfg.seed;
    metrics["config"] = cfg.to_kv().values();
    if (cfg.alternate_rounds > 0) metrics["alternate_rounds"] = cfg.alternate_rounds;

    json timing;
    const auto t_start = std::chrono::steady_clock::now();
    auto timed = [&](const char* name, auto&& fn) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        timing[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    std::string stage = "synth";
    try {
        timed("synth", [&] { pipeline_synth(cfg, out_dir); });

        if (cfg.alternate_rounds > 0) {
            stage = "alternate-train";
            timed("alternate_train", [&] {
                run_alternating(cfg, out_dir, result.stage1, result.stage2,
                                &result.label_reads_before_eval);
            });
        } else {
            stage = "stage1";
            timed("stage1", [&] {
                result.stage1 = pipeline_stage1(cfg, out_dir, &result.label_reads_before_eval);
            });
            stage = "stage2";
            timed("stage2", [&] {
                result.stage2 = pipeline_stage2(cfg, out_dir, &result.label_reads_before_eval);
            });
        }
        metrics["stage1"] = metrics_json(result.stage1, false);
        metrics["stage2"] = metrics_json(result.stage2, true);
        metrics["label_reads_before_eval"] = result.label_reads_before_eval;

        stage = "eval";
        eval::LinearProbe probe;
        timed("eval", [&] { result.metrics = pipeline_eval(cfg, out_dir, &probe); });
        metrics["eval"] = group_metrics_json(result.metrics);
        metrics["eval"]["probe_lr_used"] = probe.lr_used;
        metrics["eval"]["probe_retries"] = probe.retries;
        metrics["eval"]["probe_missing_classes"] = probe.missing_classes;
        metrics["eval"]["train_fraction"] = cfg.eval_fraction;
        metrics["eval"]["probe_epochs"] = cfg.probe_epochs();

        stage = "analyze";
        timed("analyze", [&] { result.protos = pipeline_analyze(cfg, out_dir); });
        metrics["prototypes"] = proto_dist_json(result.protos);
    } catch (const std::exception& e) {
        metrics["failed_stage"] = stage;
        metrics["error"] = e.what();
        write_text(out_dir + "/metrics.json", metrics.dump(2) + "\n");
        throw Error("pipeline stage '" + stage + "' failed: " + e.what());
    }

    write_text(out_dir + "/metrics.json", metrics.dump(2) + "\n");
    timing["total"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    write_text(out_dir + "/timing.json", timing.dump(2) + "\n");
    return result;
}

// ---------------------------------------------------------------------------
// Sweeps

namespace {

RunConfig apply_axis(RunConfig cfg, const std::string& axis, double value) {
    if (axis == "K") {
        cfg.proto.k = static_cast<std::size_t>(value);
    } else if (axis == "tau") {
        cfg.reb.tau = value;
    } else if (axis == "rho") {
        cfg.rho = value;
    } else if (axis == "fraction") {
        cfg.eval_fraction = value;
    } else {
        throw SpecError("unknown sweep axis: " + axis + " (expected K, tau, rho or fraction)");
    }
    return cfg;
}

std::size_t thread_cap() {
    const char* env = std::getenv("FASSL_THREADS");
    if (!env) return 1;
    const long v = std::strtol(env, nullptr, 10);
    return v < 1 ? 1 : static_cast<std::size_t>(v);
}

std::string axis_value_name(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    std::string s = buf;
    for (char& c : s) {
        if (c == '.') c = 'p';
    }
    return s;
}

}  // namespace

std::vector<SweepRow> sweep(const RunConfig& base, const std::string& axis,
                            const std::vector<double>& values, std::size_t repeats,
                            const std::string& out_dir) {
    if (values.empty()) throw SpecError("sweep needs at least one value");
    if (repeats == 0) throw SpecError("sweep needs at least one repeat");
    for (double v : values) {
        if (!std::isfinite(v)) throw SpecError("sweep values must be finite");
    }
    fs::create_directories(out_dir);

    struct Task {
        std::size_t value_idx, repeat;
        std::string dir;
        RunConfig cfg;
    };
    std::vector<Task> tasks;
    for (std::size_t vi = 0; vi < values.size(); ++vi) {
        for (std::size_t r = 0; r < repeats; ++r) {
            Task t;
            t.value_idx = vi;
            t.repeat = r;
            RunConfig cfg = apply_axis(base, axis, values[vi]);
            // paired seeds: repeat r uses the same seed for every axis value
            cfg.seed = derive_seed(base.seed, "sweep-repeat", r);
            t.cfg = cfg;
            t.dir = out_dir + "/" + axis + "_" + axis_value_name(values[vi]) + "/rep" + std::to_string(r);
            tasks.push_back(std::move(t));
        }
    }

    struct Outcome {
        bool ok = false;
        std::string error;
        PipelineResult res;
    };
    std::vector<Outcome> outcomes(tasks.size());

    const std::size_t workers = std::min(thread_cap(), tasks.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            try {
                outcomes[i].res = run_pipeline(tasks[i].cfg, tasks[i].dir);
                outcomes[i].ok = true;
            } catch (const std::exception& e) {
                outcomes[i].error = e.what();
            }
        }
    };
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    std::vector<SweepRow> rows(values.size());
    for (std::size_t vi = 0; vi < values.size(); ++vi) rows[vi].value = values[vi];
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        SweepRow& row = rows[tasks[i].value_idx];
        if (!outcomes[i].ok) {
            ++row.failed;
            continue;
        }
        const PipelineResult& r = outcomes[i].res;
        ++row.ok;
        row.mean.acc_all += r.metrics.acc_all;
        row.mean.acc_overall += r.metrics.acc_overall;
        row.mean.acc_frequent += r.metrics.acc_frequent;
        row.mean.acc_medium += r.metrics.acc_medium;
        row.mean.acc_rare += r.metrics.acc_rare;
        row.mean.std_groups += r.metrics.std_groups;
        row.mean_pct_frequent += r.protos.pct_frequent;
        row.mean_pct_medium += r.protos.pct_medium;
        row.mean_pct_rare += r.protos.pct_rare;
    }
    for (SweepRow& row : rows) {
        if (row.ok == 0) continue;
        const double n = static_cast<double>(row.ok);
        row.mean.acc_all /= n;
        row.mean.acc_overall /= n;
        row.mean.acc_frequent /= n;
        row.mean.acc_medium /= n;
        row.mean.acc_rare /= n;
        row.mean.std_groups /= n;
        row.mean_pct_frequent /= n;
        row.mean_pct_medium /= n;
        row.mean_pct_rare /= n;
    }

    std::string runs_csv = "axis,value,repeat,seed,status,acc_all,acc_overall,acc_frequent,acc_medium,"
                           "acc_rare,std_groups,proto_pct_frequent,proto_pct_medium,proto_pct_rare,error\n";
    char line[512];
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        const Task& t = tasks[i];
        const Outcome& o = outcomes[i];
        if (o.ok) {
            std::snprintf(line, sizeof(line),
                          "%s,%.10g,%zu,%llu,ok,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,\n",
                          axis.c_str(), values[t.value_idx], t.repeat,
                          static_cast<unsigned long long>(t.cfg.seed), o.res.metrics.acc_all,
                          o.res.metrics.acc_overall, o.res.metrics.acc_frequent, o.res.metrics.acc_medium,
                          o.res.metrics.acc_rare, o.res.metrics.std_groups, o.res.protos.pct_frequent,
                          o.res.protos.pct_medium, o.res.protos.pct_rare);
        } else {
            std::string msg = o.error;
            for (char& c : msg) {
                if (c == ',' || c == '\n') c = ';';
            }
            std::snprintf(line, sizeof(line), "%s,%.10g,%zu,%llu,error,,,,,,,,,,%s\n", axis.c_str(),
                          values[t.value_idx], t.repeat, static_cast<unsigned long long>(t.cfg.seed),
                          msg.c_str());
        }
        runs_csv += line;
    }
    write_text(out_dir + "/sweep_runs.csv", runs_csv);

    std::string csv = "value,runs_ok,runs_failed,acc_all,acc_overall,acc_frequent,acc_medium,acc_rare,"
                      "std_groups,proto_pct_frequent,proto_pct_medium,proto_pct_rare\n";
    for (const SweepRow& row : rows) {
        std::snprintf(line, sizeof(line), "%.10g,%zu,%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                      row.value, row.ok, row.failed, row.mean.acc_all, row.mean.acc_overall,
                      row.mean.acc_frequent, row.mean.acc_medium, row.mean.acc_rare, row.mean.std_groups,
                      row.mean_pct_frequent, row.mean_pct_medium, row.mean_pct_rare);
        csv += line;
    }
    write_text(out_dir + "/sweep.csv", csv);
    return rows;
}

}  // namespace fassl::pipeline
