#include "cli_support.hpp"

#include "fei3d/checkpoint.hpp"
#include "fei3d/data.hpp"
#include "fei3d/error.hpp"
#include "fei3d/fusion.hpp"
#include "fei3d/gradcheck.hpp"
#include "fei3d/losses.hpp"
#include "fei3d/metrics.hpp"
#include "fei3d/morphviz.hpp"
#include "fei3d/nn.hpp"
#include "fei3d/text_io.hpp"
#include "fei3d/training.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <fmt/format.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace fei3d;
using nlohmann::json;

namespace {

struct Common {
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

struct ModelFlags {
    std::string head;
    std::size_t hidden_width = 2048;
    std::size_t hidden_layers = 4;
    std::vector<double> dropout = {0.5, 0.4};
    bool no_batch_norm = false;
    double leaky_slope = 0.01;

    [[nodiscard]] nn::MlpOptions options() const {
        nn::MlpOptions o;
        o.hidden_width = hidden_width;
        o.hidden_layers = hidden_layers;
        o.dropout = dropout;
        o.batch_norm = !no_batch_norm;
        o.leaky_slope = leaky_slope;
        return o;
    }
};

struct TrainFlags {
    std::string loss;
    std::size_t batch = 64;
    double weight_decay = 1e-5;
    std::size_t epochs = 100;
    std::size_t patience = 3;
    double base_lr = 1e-6;
    double max_lr = 1e-4;
    std::size_t step_size = 0;
    double w1 = 1.0;
    double w2 = 1.0;
    bool ccc_literal = false;

    [[nodiscard]] training::TrainConfig config(std::uint64_t seed, unsigned threads) const {
        training::TrainConfig c;
        c.batch_size = batch;
        c.weight_decay = weight_decay;
        c.max_epochs = epochs;
        c.patience = patience;
        c.base_lr = base_lr;
        c.max_lr = max_lr;
        c.step_size = step_size;
        c.seed = seed;
        c.threads = threads;
        c.validate();
        return c;
    }

    [[nodiscard]] losses::VaLossConfig va() const { return {w1, w2, !ccc_literal}; }
};

void add_common(CLI::App *sub, Common &c, bool with_out = true) {
    sub->add_option("--config", c.config, "JSON file of option values; explicit flags win");
    if (with_out) {
        sub->add_option("--out", c.out, "Run directory");
    }
    sub->add_option("--seed", c.seed, "Master seed");
    sub->add_option("--threads", c.threads, "Evaluation threads (falls back to FEI3D_THREADS)");
}

void add_model_flags(CLI::App *sub, ModelFlags &m) {
    sub->add_option("--head", m.head, "raf_db_7 | affectnet_8_va | va_only_2 | custom:<n> (default from labels)");
    sub->add_option("--hidden-width", m.hidden_width, "Hidden layer width");
    sub->add_option("--hidden-layers", m.hidden_layers, "Number of hidden blocks");
    sub->add_option("--dropout", m.dropout, "Dropout rate per hidden block");
    sub->add_flag("--no-batch-norm", m.no_batch_norm, "Drop the batch-norm layers");
    sub->add_option("--leaky-slope", m.leaky_slope, "Leaky ReLU negative slope");
}

void add_train_flags(CLI::App *sub, TrainFlags &t) {
    sub->add_option("--loss", t.loss, "ce | wce | combined | stage1 | stage2 | mse (default from head)");
    sub->add_option("--batch", t.batch, "Batch size");
    sub->add_option("--weight-decay", t.weight_decay, "Decoupled weight decay");
    sub->add_option("--epochs", t.epochs, "Maximum epochs");
    sub->add_option("--patience", t.patience, "Early-stopping patience");
    sub->add_option("--base-lr", t.base_lr, "Cyclic LR lower bound");
    sub->add_option("--max-lr", t.max_lr, "Cyclic LR upper bound");
    sub->add_option("--step-size", t.step_size, "Cyclic LR half period in batches (0: half an epoch)");
    sub->add_option("--w1", t.w1, "MSE weight in the stage-1 loss");
    sub->add_option("--w2", t.w2, "MSE weight in the stage-2 loss");
    sub->add_flag("--ccc-literal", t.ccc_literal, "Stage-2 loss uses CCC itself instead of 1 - CCC");
}

void require(const CLI::App &sub, std::initializer_list<const char *> flags) {
    for (const char *flag : flags) {
        const CLI::Option *opt = sub.get_option(flag);
        if (opt->count() == 0) {
            throw Error(ErrorKind::usage, std::string("missing required option ") + flag);
        }
    }
}

void require_path(const std::string &path, const char *flag) {
    if (!path.empty() && !fs::exists(path)) {
        throw Error(ErrorKind::io, std::string(flag) + ": '" + path + "' does not exist");
    }
}

void start_run(const Common &c, json config) {
    fs::create_directories(c.out);
    cli::write_json(fs::path(c.out) / "config.json", config);
}

void write_text(const Common &c, const std::string &name, const std::string &content) {
    text::write_text(fs::path(c.out) / name, content);
}

nn::HeadKind resolve_head(const std::string &flag, const data::ParamDataset &train) {
    if (!flag.empty()) {
        return nn::HeadKind::parse(flag);
    }
    if (train.label_space == data::LabelSpace::raf7) {
        return nn::HeadKind::raf_db_7();
    }
    return train.has_va() ? nn::HeadKind::affectnet_8_va() : nn::HeadKind::custom(8);
}

void check_head(const nn::HeadKind &head, const data::ParamDataset &train) {
    const std::size_t classes = data::class_count(train.label_space);
    if (head.class_count() > 0 && head.class_count() != classes) {
        throw Error(ErrorKind::config, "head " + head.name() + " has " + std::to_string(head.class_count()) +
                                           " classes but the labels use " +
                                           std::string(data::to_string(train.label_space)));
    }
    if (head.has_va() && !train.has_va()) {
        throw Error(ErrorKind::config, "head " + head.name() + " needs valence/arousal targets");
    }
}

training::LossKind resolve_loss(const TrainFlags &t, const nn::HeadKind &head) {
    return t.loss.empty() ? training::default_loss_for(head) : training::parse_loss_kind(t.loss);
}

training::Objective make_objective(const TrainFlags &t, const nn::HeadKind &head, const data::ParamDataset &train) {
    const auto kind = resolve_loss(t, head);
    losses::ClassWeights weights;
    if (kind == training::LossKind::weighted_cross_entropy || kind == training::LossKind::stage1_combined) {
        weights = losses::class_weights_from_counts(data::class_frequencies(train));
    }
    return training::Objective(kind, head, weights, t.va());
}

json fit_summary(const training::FitResult &r) {
    return {{"best_epoch", r.best_epoch},
            {"best_val_loss", r.best_val_loss},
            {"epochs_run", r.history.size()},
            {"stopped_early", r.stopped_early},
            {"global_steps", r.global_steps},
            {"step_size", r.step_size}};
}

std::string tagged_history(const std::vector<training::EpochRecord> &history, const std::string &stage) {
    std::string out;
    for (const auto &line : text::lines(training::history_jsonl(history))) {
        if (line.empty()) {
            continue;
        }
        auto j = json::parse(line);
        j["stage"] = stage;
        out += j.dump() + "\n";
    }
    return out;
}

struct EvalSplit {
    std::string name;
    const data::ParamDataset *ds;
};

EvalSplit pick_eval_split(const std::optional<data::ParamDataset> &test, const std::optional<data::ParamDataset> &val,
                          const data::ParamDataset &train) {
    if (test) return {"test", &*test};
    if (val) return {"val", &*val};
    return {"train", &train};
}

// ---------------------------------------------------------------- train-3d

struct Train3dFlags {
    std::string data;
    std::string val;
    std::string test;
    std::string kind;
    std::string source = "3d";
    bool two_stage = false;
    std::size_t stage2_epochs = 0;
    ModelFlags model;
    TrainFlags train;
};

void run_train_3d(const CLI::App &sub, Common &c, const Train3dFlags &f) {
    require(sub, {"--data", "--kind", "--out"});
    require_path(f.data, "--data");
    require_path(f.val, "--val");
    require_path(f.test, "--test");
    const auto kind = data::ParamKind::parse(f.kind);
    const auto train = data::load_param_dataset(f.data, kind);
    std::optional<data::ParamDataset> val;
    std::optional<data::ParamDataset> test;
    if (!f.val.empty()) val = data::load_param_dataset(f.val, kind);
    if (!f.test.empty()) test = data::load_param_dataset(f.test, kind);
    const data::ParamDataset &val_ds = val ? *val : train;

    const nn::HeadKind head = resolve_head(f.model.head, train);
    check_head(head, train);
    const auto cfg = f.train.config(c.seed, c.threads);

    json config = cli::resolved_options(sub);
    config["threads"] = c.threads;
    config["head"] = head.name();
    config["loss"] = f.two_stage ? "stage1,stage2" : std::string(training::to_string(resolve_loss(f.train, head)));
    config["validation_source"] = val ? "val" : "train (no --val given)";
    start_run(c, config);

    Rng init(training::derive_seed(c.seed, 4));
    nn::MlpModel model = nn::build_classifier(kind.dim(), head, init, f.model.options());
    const auto train_td = data::to_training_data(train);
    const auto val_td = data::to_training_data(val_ds);

    json fit_json;
    std::string history;
    training::CheckpointMeta meta;
    meta.seed = c.seed;
    if (f.two_stage) {
        if (!(head == nn::HeadKind::affectnet_8_va())) {
            throw Error(ErrorKind::config, "--two-stage needs the affectnet_8_va head");
        }
        std::optional<std::size_t> stage2;
        if (f.stage2_epochs > 0) stage2 = f.stage2_epochs;
        const auto r = training::fit_two_stage_va(model, train_td, val_td, cfg, f.train.va(), stage2);
        fit_json = {{"stage1", fit_summary(r.stage1)}, {"stage2", fit_summary(r.stage2)}};
        history = tagged_history(r.stage1.history, "stage1") + tagged_history(r.stage2.history, "stage2");
        meta.epoch = r.stage2.best_epoch;
        meta.best_val_loss = r.stage2.best_val_loss;
    } else {
        const auto objective = make_objective(f.train, head, train);
        const auto r = training::fit(model, train_td, val_td, objective, cfg);
        fit_json = fit_summary(r);
        fit_json["loss"] = training::to_string(objective.kind());
        history = training::history_jsonl(r.history);
        meta.epoch = r.best_epoch;
        meta.best_val_loss = r.best_val_loss;
    }
    write_text(c, "history.jsonl", history);
    meta.extra = {{"command", "train-3d"}, {"kind", kind.name()}, {"label_space", data::to_string(train.label_space)}};
    training::save_checkpoint(model, meta, fs::path(c.out) / "model.ckpt");

    const EvalSplit split = pick_eval_split(test, val, train);
    const Matrix outputs = nn::predict_parallel(model, split.ds->params, c.threads);
    const auto predictions = cli::predictions_from_outputs(outputs, model.head_kind(), split.ds->ids, f.source);
    write_text(c, "predictions.csv", data::predictions_csv(predictions));
    const auto ev = cli::evaluate(predictions, *split.ds);

    const json metrics_json = {{"command", "train-3d"},
                               {"evaluated_on", split.name},
                               {"fit", fit_json},
                               {"evaluation", ev.to_json()}};
    cli::write_json(fs::path(c.out) / "metrics.json", metrics_json);
    const std::string label = (head.class_count() > 0 ? "Classifier_" : "Regressor_") + kind.name();
    write_text(c, "report.txt",
               fmt::format("train-3d: {} parameters, {} head, evaluated on {} ({} samples)\n\n", kind.name(),
                           model.head_kind().name(), split.name, ev.alignment.pairs.size()) +
                   cli::report_tables({{label, &ev}}));
}

// ---------------------------------------------------------------- train-intermediate

struct IntermediateFlags {
    std::string data;
    std::string features;
    std::string val;
    std::string val_features;
    std::string test;
    std::string test_features;
    std::string kind;
    std::string source = "intermediate";
    std::size_t proj_dim = 256;
    ModelFlags model;
    TrainFlags train;
};

void run_train_intermediate(const CLI::App &sub, Common &c, const IntermediateFlags &f) {
    require(sub, {"--data", "--features", "--kind", "--out"});
    for (const auto &[path, flag] : {std::pair{f.data, "--data"}, {f.features, "--features"}, {f.val, "--val"},
                                     {f.val_features, "--val-features"}, {f.test, "--test"},
                                     {f.test_features, "--test-features"}}) {
        require_path(path, flag);
    }
    if (f.val.empty() != f.val_features.empty() || f.test.empty() != f.test_features.empty()) {
        throw Error(ErrorKind::usage, "--val/--val-features and --test/--test-features must be given together");
    }
    const auto kind = data::ParamKind::parse(f.kind);
    const auto train = data::load_param_dataset(f.data, kind);
    const auto train_feat = data::load_features(f.features);
    std::optional<data::ParamDataset> val;
    std::optional<data::ParamDataset> test;
    std::optional<data::FeatureSet> val_feat;
    std::optional<data::FeatureSet> test_feat;
    if (!f.val.empty()) {
        val = data::load_param_dataset(f.val, kind);
        val_feat = data::load_features(f.val_features);
    }
    if (!f.test.empty()) {
        test = data::load_param_dataset(f.test, kind);
        test_feat = data::load_features(f.test_features);
    }

    const nn::HeadKind head = resolve_head(f.model.head, train);
    check_head(head, train);
    const auto cfg = f.train.config(c.seed, c.threads);
    json config = cli::resolved_options(sub);
    config["threads"] = c.threads;
    config["head"] = head.name();
    config["loss"] = training::to_string(resolve_loss(f.train, head));
    config["validation_source"] = val ? "val" : "train (no --val given)";
    start_run(c, config);

    const auto train_td = fusion::join_features(train_feat, train);
    const auto val_td = val ? fusion::join_features(*val_feat, *val) : train_td;
    Rng init(training::derive_seed(c.seed, 4));
    fusion::IntermediateFusionModel model(train_feat.features.cols(), kind.dim(), f.proj_dim, head,
                                          f.model.options(), init);
    const auto objective = make_objective(f.train, head, train);
    const auto r = training::fit(model, train_td, val_td, objective, cfg);
    write_text(c, "history.jsonl", training::history_jsonl(r.history));
    training::CheckpointMeta meta;
    meta.seed = c.seed;
    meta.epoch = r.best_epoch;
    meta.best_val_loss = r.best_val_loss;
    meta.extra = {{"command", "train-intermediate"}, {"kind", kind.name()}};
    fusion::save_checkpoint(model, meta, fs::path(c.out) / "model.ckpt");

    const EvalSplit split = pick_eval_split(test, val, train);
    const auto &split_feat = test ? *test_feat : (val ? *val_feat : train_feat);
    const auto eval_td = fusion::join_features(split_feat, *split.ds);
    const Matrix outputs = nn::predict_parallel(model, eval_td.features, c.threads);
    const auto predictions = cli::predictions_from_outputs(outputs, head, split.ds->ids, f.source);
    write_text(c, "predictions.csv", data::predictions_csv(predictions));
    const auto ev = cli::evaluate(predictions, *split.ds);
    json fit_json = fit_summary(r);
    fit_json["loss"] = training::to_string(objective.kind());
    cli::write_json(fs::path(c.out) / "metrics.json", {{"command", "train-intermediate"},
                                                       {"evaluated_on", split.name},
                                                       {"fit", fit_json},
                                                       {"evaluation", ev.to_json()}});
    write_text(c, "report.txt",
               fmt::format("train-intermediate: 2D features ({}) + {} parameters, evaluated on {} ({} samples)\n\n",
                           train_feat.features.cols(), kind.name(), split.name, ev.alignment.pairs.size()) +
                   cli::report_tables({{"Intermediate fusion", &ev}}));
}

// ---------------------------------------------------------------- fuse-late

struct FuseFlags {
    std::string a;
    std::string b;
    std::string strategy = "weighted";
    std::optional<double> w;
    std::string labels;
    bool from_logits_a = false;
    bool from_logits_b = false;
};

void run_fuse_late(const CLI::App &sub, Common &c, const FuseFlags &f) {
    require(sub, {"--a", "--b", "--out"});
    require_path(f.a, "--a");
    require_path(f.b, "--b");
    require_path(f.labels, "--labels");
    const auto strategy = fusion::FusionStrategy::parse(f.strategy, f.w);
    const auto pa = data::load_predictions(f.a, f.from_logits_a);
    const auto pb = data::load_predictions(f.b, f.from_logits_b);
    json config = cli::resolved_options(sub);
    config["threads"] = c.threads;
    start_run(c, config);
    write_text(c, "history.jsonl", "");

    const auto fused = fusion::late_fuse(pa, pb, strategy);
    write_text(c, "predictions.csv", data::predictions_csv(fused.fused));
    json m = {{"command", "fuse-late"},
              {"strategy", strategy.name()},
              {"weight", strategy.weight ? json(*strategy.weight) : json(nullptr)},
              {"alignment",
               {{"paired", fused.alignment.pairs.size()},
                {"dropped_a", fused.alignment.dropped_a},
                {"dropped_b", fused.alignment.dropped_b}}}};
    std::string fused_label = "Late fusion (" + strategy.name();
    if (strategy.weight) fused_label += " w=" + text::format_double(*strategy.weight);
    fused_label += ")";
    std::string report = fmt::format("fuse-late: {} of '{}' (2D) and '{}' (3D), {} paired samples\n", fused_label,
                                     pa.source, pb.source, fused.alignment.pairs.size());
    if (!f.labels.empty()) {
        const auto truth = data::load_param_dataset(f.labels, std::nullopt);
        const auto ea = cli::evaluate(pa, truth);
        const auto eb = cli::evaluate(pb, truth);
        const auto ef = cli::evaluate(fused.fused, truth);
        m["evaluation"] = {{"a", ea.to_json()}, {"b", eb.to_json()}, {"fused", ef.to_json()}};
        report += "\n" + cli::report_tables({{pa.source, &ea}, {pb.source, &eb}, {fused_label, &ef}});
    }
    cli::write_json(fs::path(c.out) / "metrics.json", m);
    write_text(c, "report.txt", report);
}

// ---------------------------------------------------------------- evaluate

struct EvaluateFlags {
    std::string pred;
    std::string labels;
    bool from_logits = false;
};

void run_evaluate(const CLI::App &sub, Common &c, const EvaluateFlags &f) {
    require(sub, {"--pred", "--labels", "--out"});
    require_path(f.pred, "--pred");
    require_path(f.labels, "--labels");
    json config = cli::resolved_options(sub);
    config["threads"] = c.threads;
    start_run(c, config);
    write_text(c, "history.jsonl", "");
    const auto predictions = data::load_predictions(f.pred, f.from_logits);
    const auto truth = data::load_param_dataset(f.labels, std::nullopt);
    const auto ev = cli::evaluate(predictions, truth);
    cli::write_json(fs::path(c.out) / "metrics.json",
                    {{"command", "evaluate"}, {"source", predictions.source}, {"evaluation", ev.to_json()}});
    write_text(c, "report.txt",
               fmt::format("evaluate: '{}' on {} labelled samples\n\n", predictions.source, ev.alignment.pairs.size()) +
                   cli::report_tables({{predictions.source, &ev}}));
}

// ---------------------------------------------------------------- sweep

struct SweepFlags {
    std::string a;
    std::string b;
    std::string labels;
    std::string grid = "0:1:0.05";
    std::string objective;
    bool from_logits_a = false;
    bool from_logits_b = false;
};

void run_sweep(const CLI::App &sub, Common &c, const SweepFlags &f) {
    require(sub, {"--a", "--b", "--labels", "--out"});
    require_path(f.a, "--a");
    require_path(f.b, "--b");
    require_path(f.labels, "--labels");
    const auto grid = fusion::parse_grid(f.grid);
    const auto pa = data::load_predictions(f.a, f.from_logits_a);
    const auto pb = data::load_predictions(f.b, f.from_logits_b);
    const auto truth = data::load_param_dataset(f.labels, std::nullopt);
    const auto objective = f.objective.empty()
                               ? (pa.has_probs() && pb.has_probs() ? fusion::SweepObjective::accuracy
                                                                   : fusion::SweepObjective::ccc)
                               : fusion::parse_sweep_objective(f.objective);
    json config = cli::resolved_options(sub);
    config["threads"] = c.threads;
    config["objective"] = fusion::to_string(objective);
    start_run(c, config);
    write_text(c, "history.jsonl", "");

    // rows present in both prediction sets and the labels, in label order
    std::vector<std::size_t> ra;
    std::vector<std::size_t> rb;
    std::vector<std::size_t> rt;
    for (std::size_t t = 0; t < truth.size(); ++t) {
        const auto ia = pa.find(truth.ids[t]);
        const auto ib = pb.find(truth.ids[t]);
        if (ia && ib) {
            ra.push_back(*ia);
            rb.push_back(*ib);
            rt.push_back(t);
        }
    }
    if (rt.empty()) {
        throw Error(ErrorKind::alignment, "no sample id appears in both prediction sets and the labels");
    }
    fusion::SweepResult result;
    if (objective == fusion::SweepObjective::accuracy) {
        if (!pa.has_probs() || !pb.has_probs()) {
            throw Error(ErrorKind::data, "accuracy sweeps need class probabilities in both prediction sets");
        }
        std::vector<int> labels;
        for (auto t : rt) labels.push_back(truth.labels[t]);
        result = fusion::sweep_fusion_weight(gather_rows(pa.probs, ra), gather_rows(pb.probs, rb), labels, grid);
    } else {
        if (!pa.has_va() || !pb.has_va() || !truth.has_va()) {
            throw Error(ErrorKind::data, "ccc/rmse sweeps need valence/arousal in both prediction sets and the labels");
        }
        result = fusion::sweep_fusion_weight_va(gather_rows(pa.va, ra), gather_rows(pb.va, rb),
                                                gather_rows(truth.va, rt), grid, objective);
    }
    json table = json::array();
    std::string report = fmt::format("sweep: weighted fusion of '{}' (2D) and '{}' (3D), objective {}, {} samples\n\n",
                                     pa.source, pb.source, fusion::to_string(objective), rt.size());
    report += fmt::format("{:>8}  {:>10}\n", "w", fusion::to_string(objective));
    for (const auto &p : result.table) {
        table.push_back({{"w", p.weight}, {"value", p.value}});
        report += fmt::format("{:>8.4f}  {:>10.4f}{}\n", p.weight, p.value, p.weight == result.best_weight ? "  *" : "");
    }
    report += fmt::format("\nbest_w = {}  ({} = {:.4f})\n", text::format_double(result.best_weight),
                          fusion::to_string(objective), result.best_value);
    cli::write_json(fs::path(c.out) / "metrics.json", {{"command", "sweep"},
                                                       {"objective", fusion::to_string(objective)},
                                                       {"samples", rt.size()},
                                                       {"best_w", result.best_weight},
                                                       {"best_value", result.best_value},
                                                       {"table", table}});
    write_text(c, "report.txt", report);
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckFlags {
    std::size_t input_dim = 12;
    std::size_t hidden_width = 16;
    std::size_t hidden_layers = 4;
    std::size_t samples = 16;
    std::vector<std::string> losses = {"mse", "ce", "wce", "combined", "stage1", "stage2"};
    double h = 1e-5;
    double tolerance = 1e-5;
};

void run_gradcheck(const CLI::App &sub, Common &c, const GradcheckFlags &f) {
    require(sub, {"--out"});
    json config = cli::resolved_options(sub);
    config["threads"] = c.threads;
    start_run(c, config);
    write_text(c, "history.jsonl", "");

    nn::MlpOptions options;
    options.hidden_width = f.hidden_width;
    options.hidden_layers = f.hidden_layers;
    options.dropout = {};
    json results = json::object();
    std::string report = fmt::format("gradcheck: {}->{}x{} MLP, {} samples, h={}\n\n", f.input_dim, f.hidden_width,
                                     f.hidden_layers, f.samples, text::format_double(f.h));
    report += fmt::format("{:<10} {:>14} {:>8}  {}\n", "loss", "max_rel_err", "checked", "worst parameter");
    bool passed = true;
    for (std::size_t li = 0; li < f.losses.size(); ++li) {
        const auto kind = training::parse_loss_kind(f.losses[li]);
        nn::HeadKind head = nn::HeadKind::raf_db_7();
        if (kind == training::LossKind::mse || kind == training::LossKind::stage2_va) {
            head = nn::HeadKind::va_only_2();
        } else if (kind == training::LossKind::affectnet_combined || kind == training::LossKind::stage1_combined) {
            head = nn::HeadKind::affectnet_8_va();
        }
        Rng rng(training::derive_seed(c.seed, 1000 + li));
        nn::MlpModel model = nn::build_classifier(f.input_dim, head, rng, options);
        Matrix batch(f.samples, f.input_dim);
        for (int attempt = 0; attempt < 100; ++attempt) {
            for (double &v : batch.values()) v = rng.normal();
            if (model.min_abs_preactivation(batch) > 1e-3) break;
        }
        training::Targets targets;
        if (head.class_count() > 0) {
            for (std::size_t i = 0; i < f.samples; ++i) {
                targets.labels.push_back(static_cast<int>(i % head.class_count()));
            }
        }
        if (head.has_va()) {
            targets.va = Matrix(f.samples, 2);
            for (double &v : targets.va.values()) v = rng.uniform(-1.0, 1.0);
        }
        std::vector<std::size_t> counts(std::max<std::size_t>(head.class_count(), 1), 0);
        for (int y : targets.labels) ++counts[static_cast<std::size_t>(y)];
        losses::ClassWeights weights;
        if (kind == training::LossKind::weighted_cross_entropy || kind == training::LossKind::stage1_combined) {
            weights = losses::class_weights_from_counts(counts);
        }
        const training::Objective objective(kind, head, weights);
        const auto r = nn::grad_check(
            model, [&](const Matrix &out) { return objective.evaluate(out, targets, nullptr); }, batch, f.h);
        const bool ok = r.max_relative_error < f.tolerance;
        passed = passed && ok;
        results[f.losses[li]] = {{"max_relative_error", r.max_relative_error},
                                 {"worst_parameter", r.worst_parameter},
                                 {"worst_index", r.worst_index},
                                 {"checked", r.checked},
                                 {"passed", ok}};
        report += fmt::format("{:<10} {:>14.3e} {:>8}  {}[{}]{}\n", f.losses[li], r.max_relative_error, r.checked,
                              r.worst_parameter, r.worst_index, ok ? "" : "  FAIL");
    }
    cli::write_json(fs::path(c.out) / "metrics.json",
                    {{"command", "gradcheck"}, {"tolerance", f.tolerance}, {"passed", passed}, {"losses", results}});
    write_text(c, "report.txt", report);
    if (!passed) {
        throw Error(ErrorKind::numeric, "gradient check exceeded tolerance " + text::format_double(f.tolerance));
    }
}

// ---------------------------------------------------------------- synth

struct SynthFlags {
    std::string splits = "train=4000,val=800,test=800";
    std::string kind;
    std::size_t classes = 8;
    std::size_t dim = 156;
    double margin = 6.0;
    double noise = 1.0;
    bool va = false;
    double va_scale = 0.4;
    double va_noise = 0.05;
    std::string label_space = "affect8";
    std::string format = "csv";
    std::optional<double> predictor_accuracy;
    double predictor_va_noise = 0.1;
    std::size_t features_dim = 0;
};

void run_synth(const CLI::App &sub, Common &c, const SynthFlags &f) {
    require(sub, {"--out"});
    data::SynthSpec spec;
    spec.classes = f.classes;
    spec.dim = f.kind.empty() ? f.dim : data::ParamKind::parse(f.kind).dim();
    spec.margin = f.margin;
    spec.noise = f.noise;
    spec.with_va = f.va;
    spec.va_scale = f.va_scale;
    spec.va_noise = f.va_noise;
    spec.label_space = data::parse_label_space(f.label_space);
    spec.validate();
    if (f.format != "csv" && f.format != "bin") {
        throw Error(ErrorKind::usage, "--format must be csv or bin");
    }
    std::vector<std::pair<std::string, std::size_t>> splits;
    for (const auto part : text::split(f.splits, ',')) {
        const auto kv = text::split(part, '=');
        if (kv.size() != 2 || kv[0].empty()) {
            throw Error(ErrorKind::usage, "--splits entries must be name=count, got '" + std::string(part) + "'");
        }
        const auto n = text::parse_int(kv[1], "--splits " + std::string(kv[0]));
        if (n < 2) {
            throw Error(ErrorKind::usage, "--splits " + std::string(kv[0]) + " needs at least 2 samples");
        }
        splits.emplace_back(std::string(kv[0]), static_cast<std::size_t>(n));
    }
    json config = cli::resolved_options(sub);
    config["threads"] = c.threads;
    start_run(c, config);

    Rng model_rng(training::derive_seed(c.seed, 100));
    const auto model = data::make_synth_model(spec, model_rng);
    std::optional<data::SynthModel> feature_model;
    if (f.features_dim > 0) {
        data::SynthSpec fspec = spec;
        fspec.dim = f.features_dim;
        fspec.with_va = false;
        Rng frng(training::derive_seed(c.seed, 101));
        feature_model = data::make_synth_model(fspec, frng);
    }
    json files = json::object();
    for (std::size_t k = 0; k < splits.size(); ++k) {
        const auto &[name, n] = splits[k];
        Rng rng(training::derive_seed(c.seed, 200 + k));
        const auto ds = data::sample_synth(model, n, rng, name + "_");
        const std::string file = name + (f.format == "bin" ? ".bin" : ".csv");
        data::save_param_dataset(ds, fs::path(c.out) / file);
        json entry = {{"dataset", file}, {"samples", n}, {"class_counts", data::class_frequencies(ds)}};
        if (f.predictor_accuracy) {
            Rng prng(training::derive_seed(c.seed, 300 + k));
            const auto preds = data::simulate_predictor(ds, *f.predictor_accuracy, f.predictor_va_noise, prng, "2d");
            const std::string pfile = "pred2d_" + name + ".csv";
            write_text(c, pfile, data::predictions_csv(preds));
            entry["predictions_2d"] = pfile;
        }
        if (feature_model) {
            Rng frng(training::derive_seed(c.seed, 400 + k));
            const auto fds = data::sample_synth(*feature_model, n, frng, name + "_");
            data::FeatureSet features{"2d", fds.ids, fds.params};
            const std::string ffile = "features_" + name + ".csv";
            write_text(c, ffile, data::features_csv(features));
            entry["features_2d"] = ffile;
        }
        files[name] = entry;
    }
    cli::write_json(fs::path(c.out) / "metrics.json", {{"command", "synth"}, {"dim", spec.dim}, {"splits", files}});
}

// ---------------------------------------------------------------- decode-mesh

struct MeshFlags {
    std::string asset;
    std::string params;
    std::string out;
    std::vector<std::size_t> toy;
};

void run_decode_mesh(const CLI::App &sub, Common &c, const MeshFlags &f) {
    require(sub, {"--asset", "--out"});
    if (!f.toy.empty()) {
        if (f.toy.size() != 3) {
            throw Error(ErrorKind::usage, "--toy takes V S E");
        }
        Rng rng(training::derive_seed(c.seed, 500));
        morphviz::save_asset(morphviz::make_toy_asset(f.toy[0], f.toy[1], f.toy[2], rng), f.asset);
    }
    require_path(f.asset, "--asset");
    require_path(f.params, "--params");
    const auto asset = morphviz::load_asset(f.asset);
    const auto params = f.params.empty() ? morphviz::MeshParams{} : morphviz::parse_mesh_params(text::read_text(f.params));
    morphviz::export_obj(morphviz::decode_mesh(asset, params.shape, params.expr), f.out);
}

json error_json(std::string_view kind, const std::string &message) {
    return {{"error", {{"kind", kind}, {"message", message}}}};
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"fei3d: expression classifiers on 3D face parameters, 2D/3D fusion and evaluation"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();

    Common common;
    std::map<std::string, std::function<void(const CLI::App &)>> handlers;

    Train3dFlags t3;
    auto *s_train = app.add_subcommand("train-3d", "Train a classifier or two-stage VA regressor on parameter vectors");
    add_common(s_train, common);
    s_train->add_option("--data", t3.data, "Training dataset");
    s_train->add_option("--val", t3.val, "Validation dataset (default: the training set)");
    s_train->add_option("--test", t3.test, "Test dataset for predictions and metrics");
    s_train->add_option("--kind", t3.kind, "emoca_short | emoca_full | smirk_short | smirk_full | custom:<d>");
    s_train->add_option("--source", t3.source, "Source tag written to predictions.csv");
    s_train->add_flag("--two-stage", t3.two_stage, "Stage 1 on the 8+VA head, then a fresh VA head");
    s_train->add_option("--stage2-epochs", t3.stage2_epochs, "Stage-2 epoch cap (0: same as --epochs)");
    add_model_flags(s_train, t3.model);
    add_train_flags(s_train, t3.train);
    handlers["train-3d"] = [&](const CLI::App &s) { run_train_3d(s, common, t3); };

    IntermediateFlags ti;
    auto *s_inter = app.add_subcommand("train-intermediate", "Train the feature-level 2D+3D fusion model");
    add_common(s_inter, common);
    s_inter->add_option("--data", ti.data, "Training parameter dataset");
    s_inter->add_option("--features", ti.features, "2D features for the training samples");
    s_inter->add_option("--val", ti.val, "Validation dataset");
    s_inter->add_option("--val-features", ti.val_features, "2D features for the validation samples");
    s_inter->add_option("--test", ti.test, "Test dataset");
    s_inter->add_option("--test-features", ti.test_features, "2D features for the test samples");
    s_inter->add_option("--kind", ti.kind, "Parameter kind");
    s_inter->add_option("--proj-dim", ti.proj_dim, "Width of the learned 3D projection");
    s_inter->add_option("--source", ti.source, "Source tag written to predictions.csv");
    add_model_flags(s_inter, ti.model);
    add_train_flags(s_inter, ti.train);
    handlers["train-intermediate"] = [&](const CLI::App &s) { run_train_intermediate(s, common, ti); };

    FuseFlags fl;
    auto *s_fuse = app.add_subcommand("fuse-late", "Combine two prediction sets");
    add_common(s_fuse, common);
    s_fuse->add_option("--a", fl.a, "2D predictions");
    s_fuse->add_option("--b", fl.b, "3D predictions");
    s_fuse->add_option("--strategy", fl.strategy, "max | min | mean | weighted");
    s_fuse->add_option("--w", fl.w, "3D share for weighted fusion");
    s_fuse->add_option("--labels", fl.labels, "Labelled dataset for metrics");
    s_fuse->add_flag("--from-logits-a", fl.from_logits_a, "Apply softmax to --a rows");
    s_fuse->add_flag("--from-logits-b", fl.from_logits_b, "Apply softmax to --b rows");
    handlers["fuse-late"] = [&](const CLI::App &s) { run_fuse_late(s, common, fl); };

    EvaluateFlags ef;
    auto *s_eval = app.add_subcommand("evaluate", "Score a prediction set against labels");
    add_common(s_eval, common);
    s_eval->add_option("--pred", ef.pred, "Predictions");
    s_eval->add_option("--labels", ef.labels, "Labelled dataset");
    s_eval->add_flag("--from-logits", ef.from_logits, "Apply softmax to prediction rows");
    handlers["evaluate"] = [&](const CLI::App &s) { run_evaluate(s, common, ef); };

    SweepFlags sw;
    auto *s_sweep = app.add_subcommand("sweep", "Grid-search the weighted-fusion 3D share");
    add_common(s_sweep, common);
    s_sweep->add_option("--a", sw.a, "2D predictions");
    s_sweep->add_option("--b", sw.b, "3D predictions");
    s_sweep->add_option("--labels", sw.labels, "Labelled dataset");
    s_sweep->add_option("--grid", sw.grid, "start:stop:step or comma list");
    s_sweep->add_option("--objective", sw.objective, "accuracy | ccc | rmse (default from payloads)");
    s_sweep->add_flag("--from-logits-a", sw.from_logits_a, "Apply softmax to --a rows");
    s_sweep->add_flag("--from-logits-b", sw.from_logits_b, "Apply softmax to --b rows");
    handlers["sweep"] = [&](const CLI::App &s) { run_sweep(s, common, sw); };

    GradcheckFlags gc;
    auto *s_grad = app.add_subcommand("gradcheck", "Finite-difference check of every loss on a small MLP");
    add_common(s_grad, common);
    s_grad->add_option("--input-dim", gc.input_dim, "Input width");
    s_grad->add_option("--hidden-width", gc.hidden_width, "Hidden width");
    s_grad->add_option("--hidden-layers", gc.hidden_layers, "Hidden blocks");
    s_grad->add_option("--samples", gc.samples, "Batch rows");
    s_grad->add_option("--losses", gc.losses, "Losses to check");
    s_grad->add_option("--step", gc.h, "Finite-difference step h");
    s_grad->add_option("--tolerance", gc.tolerance, "Maximum relative error");
    handlers["gradcheck"] = [&](const CLI::App &s) { run_gradcheck(s, common, gc); };

    SynthFlags sy;
    auto *s_synth = app.add_subcommand("synth", "Generate Gaussian-cluster datasets");
    add_common(s_synth, common);
    s_synth->add_option("--splits", sy.splits, "name=count,...");
    s_synth->add_option("--kind", sy.kind, "Parameter kind fixing the dimension");
    s_synth->add_option("--classes", sy.classes, "Number of classes");
    s_synth->add_option("--dim", sy.dim, "Dimension when --kind is absent");
    s_synth->add_option("--margin", sy.margin, "Center-to-boundary distance");
    s_synth->add_option("--noise", sy.noise, "Per-coordinate noise sigma");
    s_synth->add_flag("--va", sy.va, "Add linear valence/arousal targets");
    s_synth->add_option("--va-scale", sy.va_scale, "Std of the noiseless VA signal");
    s_synth->add_option("--va-noise", sy.va_noise, "VA noise sigma");
    s_synth->add_option("--label-space", sy.label_space, "raf7 | affect8");
    s_synth->add_option("--format", sy.format, "csv | bin");
    s_synth->add_option("--predictor-accuracy", sy.predictor_accuracy, "Also write simulated 2D predictions");
    s_synth->add_option("--predictor-va-noise", sy.predictor_va_noise, "VA noise of the simulated predictor");
    s_synth->add_option("--features-dim", sy.features_dim, "Also write 2D feature files of this width");
    handlers["synth"] = [&](const CLI::App &s) { run_synth(s, common, sy); };

    MeshFlags mf;
    auto *s_mesh = app.add_subcommand("decode-mesh", "Decode shape/expression parameters to an OBJ mesh");
    s_mesh->add_option("--config", common.config, "JSON file of option values");
    s_mesh->add_option("--asset", mf.asset, "Morphable asset");
    s_mesh->add_option("--params", mf.params, "Parameter file (shape,... / expr,... lines)");
    s_mesh->add_option("--out", mf.out, "OBJ output path");
    s_mesh->add_option("--toy", mf.toy, "Write a toy asset with V S E to --asset first")->expected(3);
    s_mesh->add_option("--seed", common.seed, "Seed for --toy");
    handlers["decode-mesh"] = [&](const CLI::App &s) { run_decode_mesh(s, common, mf); };

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        std::cerr << error_json("usage", e.what()).dump() << "\n";
        return 2;
    }

    CLI::App *sub = app.get_subcommands().front();
    try {
        if (!common.config.empty()) {
            cli::apply_config_file(*sub, common.config);
        }
        if (const CLI::Option *t = sub->get_option_no_throw("--threads")) {
            common.threads = cli::resolve_threads(*t, common.threads);
        }
        handlers.at(sub->get_name())(*sub);
    } catch (const Error &e) {
        const json err = error_json(to_string(e.kind()), e.what());
        std::cerr << err.dump() << "\n";
        if (!common.out.empty() && fs::is_directory(common.out)) {
            cli::write_json(fs::path(common.out) / "error.json", err);
        }
        return e.kind() == ErrorKind::usage ? 2 : 1;
    } catch (const std::exception &e) {
        std::cerr << error_json("internal", e.what()).dump() << "\n";
        return 1;
    }
    return 0;
}
