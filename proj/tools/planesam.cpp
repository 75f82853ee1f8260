// planesam command-line entry point.
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "planesam/config.hpp"
#include "planesam/errors.hpp"
#include "planesam/pipeline.hpp"
#include "planesam/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace planesam;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfigError = 2, kDataError = 3, kNumericFault = 4 };

struct GlobalOptions {
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
};

struct TrainOptions {
    std::optional<std::string> data;
    std::optional<std::string> init;
    std::optional<int> epochs;
    std::optional<int> batch;
};

struct InferOptions {
    std::optional<std::string> data;
    std::string checkpoint;
    std::optional<std::string> boxes;
    std::optional<float> noise;
};

struct EvalOptions {
    std::string pred;
    std::optional<std::string> data;
};

struct SynthOptions {
    std::optional<int> count;
    std::optional<int> size;
    std::optional<int> planes_min;
    std::optional<int> planes_max;
};

RunConfig resolve_config(const GlobalOptions& g, Phase phase) {
    RunConfig cfg = g.config ? load_run_config(*g.config, phase) : default_run_config(phase);
    if (g.seed) {
        cfg.seed = *g.seed;
        cfg.train.seed = *g.seed;
    }
    if (g.out) cfg.io.out_dir = *g.out;
    return cfg;
}

fs::path require_manifest(const RunConfig& cfg, const std::optional<std::string>& override_path) {
    if (override_path) return *override_path;
    if (cfg.data.manifest) return *cfg.data.manifest;
    throw ConfigError("data.manifest: no dataset given (set it in the config or pass --data)");
}

void write_json_file(const fs::path& path, const json& j) {
    const fs::path partial = path.string() + ".partial";
    {
        std::ofstream out(partial);
        if (!out) throw LoadError("cannot write " + partial.string());
        out << j.dump(2) << '\n';
        if (!out) throw LoadError("short write on " + partial.string());
    }
    fs::rename(partial, path);
}

// Text files written whole: the final name appears only once complete.
class AtomicText {
public:
    explicit AtomicText(fs::path path) : path_(std::move(path)), partial_(path_.string() + ".partial"), out_(partial_) {
        if (!out_) throw LoadError("cannot write " + partial_.string());
    }
    std::ostream& stream() { return out_; }
    void commit() {
        out_.close();
        if (!out_) throw LoadError("short write on " + partial_.string());
        fs::rename(partial_, path_);
    }

private:
    fs::path path_;
    fs::path partial_;
    std::ofstream out_;
};

int cmd_gen_synth(const GlobalOptions& g, const SynthOptions& o) {
    RunConfig cfg = resolve_config(g, Phase::pretrain);
    if (o.count) cfg.data.synth_count = *o.count;
    if (o.size) cfg.data.synth.size = *o.size;
    if (o.planes_min) cfg.data.synth.planes_min = *o.planes_min;
    if (o.planes_max) cfg.data.synth.planes_max = *o.planes_max;
    if (cfg.data.synth_count <= 0) throw ConfigError("data.synth.count: must be positive");
    cfg.data.synth.validate();
    const fs::path dir = cfg.io.out_dir;
    auto s = write_synthetic_dataset(dir, cfg.data.synth_count, cfg.data.synth, cfg.seed, cfg.data.pseudo_corruption);
    std::cout << "wrote " << s.images << " images to " << (dir / "manifest.jsonl").string() << "\n"
              << "planes " << s.planes << ", non-planes " << s.non_planes << ", pseudo-label masks "
              << s.pseudo_masks << "\n";
    return kOk;
}

int cmd_train(const GlobalOptions& g, const TrainOptions& o, Phase phase) {
    RunConfig cfg = resolve_config(g, phase);
    if (o.epochs) cfg.train.epochs = *o.epochs;
    if (o.batch) cfg.train.batch_size = *o.batch;
    if (o.init) cfg.io.init_checkpoint = *o.init;
    cfg.validate();
    const fs::path manifest = require_manifest(cfg, o.data);
    const fs::path out = cfg.io.out_dir;
    fs::create_directories(out);

    // Load everything before any training side effect.
    std::vector<PretrainItem> pre_items;
    std::vector<RgbdSample> samples;
    if (phase == Phase::pretrain) {
        pre_items = load_pretrain_items(manifest);
    } else {
        samples = load_samples(manifest, true);
    }
    const std::size_t n = phase == Phase::pretrain ? pre_items.size() : samples.size();

    PlaneSamModel model(cfg.model, cfg.seed);
    if (cfg.io.init_checkpoint) {
        auto state = read_checkpoint(*cfg.io.init_checkpoint);
        restore_parameters(model, state);
        std::cout << "initialised " << state.parameters.size() << " tensors from "
                  << cfg.io.init_checkpoint->string() << "\n";
    }
    const std::int64_t total = steps_per_epoch(n, cfg.train.batch_size) * cfg.train.epochs;
    Trainer trainer(model, cfg.train, total);
    write_json_file(out / "config.json", to_json(cfg));

    const fs::path last = out / "last.ckpt";
    const fs::path log = out / "train_log.jsonl";
    fs::remove(log);
    save_checkpoint(last, model, &trainer, cfg.train);
    auto on_epoch = [&](const EpochLog& row) {
        save_checkpoint(last, model, &trainer, cfg.train);
        std::cout << "epoch " << row.epoch << "  loss " << std::setprecision(5) << row.mean_loss << "  lr "
                  << row.lr << "  skipped " << row.skipped << std::endl;
        return true;
    };
    const auto t0 = std::chrono::steady_clock::now();
    try {
        if (phase == Phase::pretrain) {
            train_pretrain(trainer, pre_items, cfg.train.epochs, log, on_epoch);
        } else {
            train_finetune(trainer, samples, cfg.train.epochs, log, on_epoch);
        }
    } catch (const NumericFault&) {
        std::cerr << "last good checkpoint kept at " << last.string() << "\n";
        throw;
    }
    save_checkpoint(out / "model.ckpt", model, &trainer, cfg.train);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto& c = trainer.counters();
    std::cout << "finished " << trainer.step() << " steps in " << std::fixed << std::setprecision(1) << secs
              << " s; prompts " << c.prompts << ", filtered masks " << c.masks_filtered << ", jittered "
              << c.prompts_jittered << ", flips " << c.flips << ", skipped " << c.skipped << "\n"
              << "checkpoint " << (out / "model.ckpt").string() << "\n";
    return kOk;
}

std::unique_ptr<PlaneSamModel> load_model(const fs::path& path) {
    auto state = read_checkpoint(path);
    auto model = std::make_unique<PlaneSamModel>(state.model, 0);
    restore_parameters(*model, state);
    return model;
}

int cmd_infer(const GlobalOptions& g, const InferOptions& o) {
    RunConfig cfg = resolve_config(g, Phase::finetune);
    if (o.noise) cfg.detector.noise_frac = *o.noise;
    cfg.validate();
    const fs::path manifest = require_manifest(cfg, o.data);
    const bool oracle = !o.boxes;
    auto samples = load_samples(manifest, oracle);
    auto model = load_model(o.checkpoint);

    std::unique_ptr<PlaneDetector> detector;
    BoxFileDetector* box_file = nullptr;
    if (oracle) {
        detector = std::make_unique<OracleDetector>(cfg.detector.noise_frac, cfg.seed);
    } else {
        auto d = std::make_unique<BoxFileDetector>(*o.boxes);
        box_file = d.get();
        detector = std::move(d);
    }

    const fs::path out = cfg.io.out_dir;
    const fs::path pred_dir = out / "pred";
    fs::create_directories(pred_dir);
    AtomicText summary(out / "infer_summary.jsonl");
    std::vector<std::pair<std::string, fs::path>> written;
    std::vector<std::string> skipped;
    for (const auto& s : samples) {
        if (box_file && !box_file->has_image(s.id)) {
            skipped.push_back(s.id);
            continue;
        }
        auto dets = filter_detections(detect_planes(s, detector.get()), cfg.detector.score_thresh,
                                      cfg.detector.max_dets);
        auto pred = predict_image(*model, s, dets);
        const fs::path raster = pred_dir / (s.id + "_pred.png");
        write_partition_png(raster, pred.partition);
        for (const auto& p : pred.prompts) {
            json row = {{"image_id", s.id},
                        {"box", {p.box.x_min, p.box.y_min, p.box.x_max, p.box.y_max}},
                        {"chosen_mask_index", p.chosen_mask},
                        {"iou_score", p.iou_score}};
            summary.stream() << row.dump() << '\n';
        }
        written.emplace_back(s.id, raster);
    }
    summary.commit();
    // Prediction manifest: one {id, pred_path} row per image.
    AtomicText preds(out / "predictions.jsonl");
    for (const auto& [id, raster] : written) {
        preds.stream() << json{{"id", id}, {"pred_path", raster.lexically_relative(out).string()}}.dump() << '\n';
    }
    preds.commit();
    std::cout << "predicted " << written.size() << " images into " << pred_dir.string() << "\n";
    if (!skipped.empty()) {
        std::cout << "skipped " << skipped.size() << " images without boxes:";
        for (const auto& id : skipped) std::cout << ' ' << id;
        std::cout << "\n";
    }
    return kOk;
}

std::map<std::string, fs::path> read_predictions(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open predictions " + path.string());
    std::map<std::string, fs::path> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            auto j = json::parse(line);
            fs::path p = j.at("pred_path").get<std::string>();
            if (p.is_relative()) p = path.parent_path() / p;
            out[j.at("id").get<std::string>()] = p;
        } catch (const json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void print_table(std::ostream& os, const DatasetMetrics& m) {
    os << "image\tVOI\tRI\tSC\n" << std::fixed << std::setprecision(4);
    for (const auto& [id, r] : m.per_image) os << id << '\t' << r.voi << '\t' << r.ri << '\t' << r.sc << '\n';
    os << "mean\t" << m.mean.voi << '\t' << m.mean.ri << '\t' << m.mean.sc << '\n';
}

int cmd_eval(const GlobalOptions& g, const EvalOptions& o) {
    RunConfig cfg = resolve_config(g, Phase::finetune);
    cfg.validate();
    const fs::path manifest = require_manifest(cfg, o.data);
    auto preds = read_predictions(o.pred);
    auto samples = load_samples(manifest, true);

    std::vector<std::string> missing_pred, missing_gt;
    std::map<std::string, const RgbdSample*> by_id;
    for (const auto& s : samples) {
        by_id[s.id] = &s;
        if (!preds.count(s.id)) missing_pred.push_back(s.id);
    }
    for (const auto& [id, _] : preds)
        if (!by_id.count(id)) missing_gt.push_back(id);
    if (!missing_pred.empty() || !missing_gt.empty()) {
        std::ostringstream msg;
        msg << "prediction and ground-truth ids do not align";
        if (!missing_pred.empty()) {
            msg << "\n  no prediction for:";
            for (const auto& id : missing_pred) msg << ' ' << id;
        }
        if (!missing_gt.empty()) {
            msg << "\n  no ground truth for:";
            for (const auto& id : missing_gt) msg << ' ' << id;
        }
        throw DataError(msg.str());
    }

    std::vector<EvaluationItem> items;
    for (const auto& s : samples) items.push_back({s.id, read_partition_png(preds.at(s.id)), ground_truth_partition(s)});
    auto metrics = evaluate_dataset(items);
    const fs::path out = cfg.io.out_dir;
    fs::create_directories(out);
    AtomicText table(out / "eval.tsv");
    print_table(table.stream(), metrics);
    table.commit();
    print_table(std::cout, metrics);
    return kOk;
}

int cmd_report(const GlobalOptions& g, const InferOptions& o) {
    RunConfig cfg = resolve_config(g, Phase::finetune);
    cfg.validate();
    const fs::path manifest = require_manifest(cfg, o.data);
    auto samples = load_samples(manifest, true);
    auto model = load_model(o.checkpoint);

    std::unique_ptr<PlaneDetector> main_detector;
    if (o.boxes) {
        main_detector = std::make_unique<BoxFileDetector>(*o.boxes);
    } else {
        main_detector = std::make_unique<OracleDetector>(o.noise.value_or(cfg.detector.noise_frac), cfg.seed);
    }
    auto main = evaluate_with_detector(*model, samples, *main_detector, cfg.detector.score_thresh,
                                       cfg.detector.max_dets);

    std::ostringstream doc;
    doc << "# Plane segmentation report\n\n"
        << "checkpoint: " << o.checkpoint << "  \n"
        << "dataset: " << manifest.string() << " (" << samples.size() << " images)  \n"
        << "boxes: " << (o.boxes ? *o.boxes : "oracle") << "\n\n## Per-image metrics\n\n```\n";
    print_table(doc, main);
    doc << "```\n\n## Box-noise sweep (oracle boxes)\n\n| noise | VOI | RI | SC |\n|---|---|---|---|\n";
    json sweep = json::array();
    for (float noise : cfg.eval.noise_sweep) {
        OracleDetector det(noise, cfg.seed);
        auto m = evaluate_with_detector(*model, samples, det, cfg.detector.score_thresh, cfg.detector.max_dets);
        doc << "| " << static_cast<int>(std::lround(noise * 100)) << "% | " << std::fixed << std::setprecision(3)
            << m.mean.voi << " | " << m.mean.ri << " | " << m.mean.sc << " |\n";
        sweep.push_back({{"noise", noise}, {"voi", m.mean.voi}, {"ri", m.mean.ri}, {"sc", m.mean.sc}});
    }
    const fs::path out = cfg.io.out_dir;
    fs::create_directories(out);
    AtomicText report(out / "report.md");
    report.stream() << doc.str();
    report.commit();
    write_json_file(out / "noise_sweep.json", sweep);
    std::cout << doc.str();
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PlaneSAM: box-prompted plane instance segmentation for RGB-D images"};
    app.require_subcommand(1);
    app.fallthrough();
    GlobalOptions g;
    app.add_option("--config", g.config, "Run configuration (JSON)");
    app.add_option("--seed", g.seed, "Seed for data generation, initialisation and training");
    app.add_option("--out", g.out, "Output directory");

    SynthOptions synth;
    auto* gen = app.add_subcommand("gen-synth", "Generate a synthetic RGB-D plane dataset");
    gen->add_option("--count", synth.count, "Number of scenes");
    gen->add_option("--size", synth.size, "Image side in pixels");
    gen->add_option("--planes-min", synth.planes_min);
    gen->add_option("--planes-max", synth.planes_max);

    TrainOptions pre_opts, fine_opts;
    auto* pre = app.add_subcommand("pretrain", "Segment-anything pretraining on pseudo-labels");
    auto* fine = app.add_subcommand("finetune", "Plane-instance fine-tuning");
    for (auto [cmd, opts] : {std::pair{pre, &pre_opts}, std::pair{fine, &fine_opts}}) {
        cmd->add_option("--data", opts->data, "Dataset manifest");
        cmd->add_option("--epochs", opts->epochs);
        cmd->add_option("--batch", opts->batch);
    }
    fine->add_option("--init", fine_opts.init, "Checkpoint to initialise from");

    InferOptions infer_opts, report_opts;
    auto* infer = app.add_subcommand("infer", "Predict plane partitions");
    auto* report = app.add_subcommand("report", "Metrics table plus box-noise sweep");
    for (auto [cmd, opts] : {std::pair{infer, &infer_opts}, std::pair{report, &report_opts}}) {
        cmd->add_option("--data", opts->data, "Dataset manifest");
        cmd->add_option("--checkpoint", opts->checkpoint, "Model checkpoint")->required();
        cmd->add_option("--boxes", opts->boxes, "Box file (JSONL); oracle boxes when absent");
        cmd->add_option("--noise", opts->noise, "Oracle box noise fraction");
    }

    EvalOptions eval_opts;
    auto* eval = app.add_subcommand("eval", "Score predicted partitions against ground truth");
    eval->add_option("--pred", eval_opts.pred, "Prediction manifest from infer")->required();
    eval->add_option("--data", eval_opts.data, "Ground-truth manifest");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (*gen) return cmd_gen_synth(g, synth);
        if (*pre) return cmd_train(g, pre_opts, Phase::pretrain);
        if (*fine) return cmd_train(g, fine_opts, Phase::finetune);
        if (*infer) return cmd_infer(g, infer_opts);
        if (*eval) return cmd_eval(g, eval_opts);
        if (*report) return cmd_report(g, report_opts);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const NumericFault& e) {
        std::cerr << "numeric fault: " << e.what() << "\n";
        return kNumericFault;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kFailure;
}
