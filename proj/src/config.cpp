#include "planesam/config.hpp"

#include <fstream>
#include <set>

#include "planesam/errors.hpp"

namespace planesam {

using json = nlohmann::json;
namespace fs = std::filesystem;

const char* phase_name(Phase p) { return p == Phase::pretrain ? "pretrain" : "finetune"; }

namespace {

// Reads one object block, remembering which keys were consumed so leftovers
// can be reported as unknown.
class Block {
public:
    Block(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
    }

    std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    bool has(const std::string& key) const { return j_.contains(key); }

    template <class T>
    void read(const std::string& key, T& out) {
        if (!j_.contains(key)) return;
        seen_.insert(key);
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(key_path(key) + ": wrong type");
        }
        if constexpr (std::is_arithmetic_v<T> && !std::is_same_v<T, bool>) {
            if (!j_.at(key).is_number()) throw ConfigError(key_path(key) + ": expected a number");
        }
    }

    template <class T>
    void read_optional(const std::string& key, std::optional<T>& out) {
        if (!j_.contains(key)) return;
        if (j_.at(key).is_null()) {
            seen_.insert(key);
            out.reset();
            return;
        }
        T v{};
        read(key, v);
        out = v;
    }

    Block child(const std::string& key) {
        seen_.insert(key);
        return Block(j_.at(key), key_path(key));
    }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.count(k)) throw ConfigError(key_path(k) + ": unknown key");
        }
    }

private:
    std::string where() const { return path_.empty() ? "config" : path_; }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

// Re-raises a module validation failure under a key-path prefix.
template <class F>
void validate_under(const std::string& prefix, F&& f) {
    try {
        f();
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        throw ConfigError(msg.rfind(prefix, 0) == 0 ? msg : prefix + ": " + msg);
    }
}

void read_backbone(Block b, BackboneConfig& cfg) {
    b.read("image_size", cfg.image_size);
    b.read("patch_size", cfg.patch_size);
    b.read("embed_dim", cfg.embed_dim);
    b.read("blocks", cfg.blocks);
    b.read("heads", cfg.heads);
    b.read("cnn_channels", cfg.cnn_channels);
    b.read("mlp_ratio", cfg.mlp_ratio);
    b.finish();
}

void read_decoder(Block b, DecoderConfig& cfg) {
    b.read("depth", cfg.depth);
    b.read("heads", cfg.heads);
    b.read("mlp_ratio", cfg.mlp_ratio);
    if (b.has("mask_head_init")) {
        std::string s;
        b.read("mask_head_init", s);
        if (s == "shared") {
            cfg.mask_head_init = MaskHeadInit::shared;
        } else if (s == "independent") {
            cfg.mask_head_init = MaskHeadInit::independent;
        } else {
            throw ConfigError(b.key_path("mask_head_init") + ": expected shared or independent");
        }
    }
    if (b.has("mask_selection")) {
        std::string s;
        b.read("mask_selection", s);
        if (s == "box_agreement") {
            cfg.mask_selection = MaskSelection::box_agreement;
        } else if (s == "iou_score") {
            cfg.mask_selection = MaskSelection::iou_score;
        } else {
            throw ConfigError(b.key_path("mask_selection") + ": expected box_agreement or iou_score");
        }
    }
    b.finish();
}

void read_loss(Block b, LossConfig& cfg) {
    if (b.has("preset")) {
        std::string s;
        b.read("preset", s);
        if (s == "planesam") {
            cfg.weights = LossWeights::planesam();
        } else if (s == "efficientsam") {
            cfg.weights = LossWeights::efficientsam();
        } else {
            throw ConfigError(b.key_path("preset") + ": expected planesam or efficientsam");
        }
    }
    b.read("w_focal", cfg.weights.focal);
    b.read("w_dice", cfg.weights.dice);
    b.read("w_mse", cfg.weights.mse);
    b.read("gamma", cfg.gamma);
    b.read("alpha", cfg.alpha);
    b.read("eps", cfg.eps);
    b.finish();
}

void read_train(Block b, TrainConfig& cfg) {
    b.read("epochs", cfg.epochs);
    b.read("batch_size", cfg.batch_size);
    b.read("lr0", cfg.lr0);
    b.read("weight_decay", cfg.weight_decay);
    if (b.has("optimizer")) {
        std::string s;
        b.read("optimizer", s);
        if (s == "adam") {
            cfg.optimizer = OptimizerKind::adam;
        } else if (s == "sgd") {
            cfg.optimizer = OptimizerKind::sgd;
        } else {
            throw ConfigError(b.key_path("optimizer") + ": expected adam or sgd");
        }
    }
    b.read("momentum", cfg.momentum);
    b.read("beta1", cfg.beta1);
    b.read("beta2", cfg.beta2);
    b.read("clip_norm", cfg.clip_norm);
    b.read("noise_frac", cfg.noise_frac);
    b.read("flip_prob", cfg.flip_prob);
    b.read_optional("min_mask_area", cfg.min_mask_area);
    if (b.has("freeze")) {
        Block f = b.child("freeze");
        f.read("prompt_encoder", cfg.freeze.prompt_encoder);
        f.read("iou_head", cfg.freeze.iou_head);
        f.read("transformer_branch", cfg.freeze.transformer_branch);
        f.finish();
    }
    b.read("seed", cfg.seed);
    b.finish();
}

void read_detector(Block b, DetectorConfig& cfg) {
    if (b.has("kind")) {
        std::string s;
        b.read("kind", s);
        if (s == "oracle") {
            cfg.kind = DetectorKind::oracle;
        } else if (s == "external") {
            cfg.kind = DetectorKind::external;
        } else {
            throw ConfigError(b.key_path("kind") + ": expected oracle or external");
        }
    }
    b.read("noise_frac", cfg.noise_frac);
    b.read("score_thresh", cfg.score_thresh);
    b.read("max_dets", cfg.max_dets);
    std::optional<std::string> weights;
    b.read_optional("weights_path", weights);
    if (weights) cfg.weights_path = fs::path(*weights);
    b.finish();
}

void read_data(Block b, RunConfig& cfg) {
    std::optional<std::string> manifest;
    b.read_optional("manifest", manifest);
    if (manifest) cfg.data.manifest = fs::path(*manifest);
    b.read("depth_max", cfg.model.depth_max);
    b.read("pseudo_corruption", cfg.data.pseudo_corruption);
    if (b.has("synth")) {
        Block s = b.child("synth");
        s.read("count", cfg.data.synth_count);
        s.read("size", cfg.data.synth.size);
        s.read("planes_min", cfg.data.synth.planes_min);
        s.read("planes_max", cfg.data.synth.planes_max);
        s.read("depth_min", cfg.data.synth.depth_min);
        s.read("depth_max", cfg.data.synth.depth_max);
        s.read("clutter", cfg.data.synth.clutter);
        s.finish();
    }
    b.finish();
}

}  // namespace

RunConfig default_run_config(Phase phase) {
    RunConfig cfg;
    cfg.phase = phase;
    cfg.train = phase == Phase::pretrain ? TrainConfig::pretrain_defaults() : TrainConfig::finetune_defaults();
    cfg.data.synth.size = cfg.model.backbone.image_size;
    return cfg;
}

RunConfig parse_run_config(const json& j, std::optional<Phase> phase_override) {
    Block root(j, "");
    Phase phase = Phase::finetune;
    if (root.has("phase")) {
        std::string s;
        root.read("phase", s);
        if (s == "pretrain") {
            phase = Phase::pretrain;
        } else if (s == "finetune") {
            phase = Phase::finetune;
        } else {
            throw ConfigError("phase: expected pretrain or finetune");
        }
    }
    if (phase_override) phase = *phase_override;
    RunConfig cfg = default_run_config(phase);
    root.read("seed", cfg.seed);
    bool synth_size_given = false;
    bool train_seed_given = false;
    if (j.contains("train") && j["train"].is_object()) train_seed_given = j["train"].contains("seed");
    if (j.contains("data") && j["data"].is_object() && j["data"].contains("synth") && j["data"]["synth"].is_object()) {
        synth_size_given = j["data"]["synth"].contains("size");
    }
    if (root.has("data")) read_data(root.child("data"), cfg);
    if (root.has("backbone")) read_backbone(root.child("backbone"), cfg.model.backbone);
    if (root.has("decoder")) read_decoder(root.child("decoder"), cfg.model.decoder);
    if (root.has("loss")) read_loss(root.child("loss"), cfg.train.loss);
    if (root.has("detector")) read_detector(root.child("detector"), cfg.detector);
    if (root.has("train")) read_train(root.child("train"), cfg.train);
    if (root.has("eval")) {
        Block e = root.child("eval");
        e.read("noise_sweep", cfg.eval.noise_sweep);
        e.finish();
    }
    if (root.has("io")) {
        Block io = root.child("io");
        std::string out = cfg.io.out_dir.string();
        io.read("out_dir", out);
        cfg.io.out_dir = out;
        std::optional<std::string> init;
        io.read_optional("init", init);
        if (init) cfg.io.init_checkpoint = fs::path(*init);
        io.finish();
    }
    root.finish();
    if (!synth_size_given) cfg.data.synth.size = cfg.model.backbone.image_size;
    if (!train_seed_given) cfg.train.seed = cfg.seed;
    cfg.train.phase = phase;
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const fs::path& path, std::optional<Phase> phase_override) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_run_config(j, phase_override);
}

void RunConfig::validate() const {
    validate_under("backbone", [&] { model.backbone.validate(); });
    validate_under("decoder", [&] { model.decoder.validate(model.backbone.embed_dim); });
    validate_under("data.depth_max", [&] {
        if (!(model.depth_max > 0.0f)) throw ConfigError("must be positive");
    });
    validate_under("data.synth", [&] { data.synth.validate(); });
    validate_under("data.synth.count", [&] {
        if (data.synth_count <= 0) throw ConfigError("must be positive");
    });
    validate_under("data.pseudo_corruption", [&] {
        if (!(data.pseudo_corruption >= 0.0f && data.pseudo_corruption < 1.0f)) throw ConfigError("must be in [0, 1)");
    });
    validate_under("loss", [&] { train.loss.validate(); });
    validate_under("train", [&] { train.validate(); });
    validate_under("detector", [&] { detector.validate(); });
    validate_under("eval.noise_sweep", [&] {
        for (float f : eval.noise_sweep)
            if (!(f >= 0.0f && f < 0.5f)) throw ConfigError("values must be in [0, 0.5)");
    });
    if (data.synth.size != model.backbone.image_size) {
        throw ConfigError("data.synth.size: must equal backbone.image_size (" +
                          std::to_string(model.backbone.image_size) + ")");
    }
}

json model_config_to_json(const ModelConfig& cfg) {
    const auto& b = cfg.backbone;
    const auto& d = cfg.decoder;
    return {{"backbone",
             {{"image_size", b.image_size},
              {"patch_size", b.patch_size},
              {"embed_dim", b.embed_dim},
              {"blocks", b.blocks},
              {"heads", b.heads},
              {"cnn_channels", b.cnn_channels},
              {"mlp_ratio", b.mlp_ratio}}},
            {"decoder",
             {{"depth", d.depth},
              {"heads", d.heads},
              {"mlp_ratio", d.mlp_ratio},
              {"mask_head_init", d.mask_head_init == MaskHeadInit::shared ? "shared" : "independent"},
              {"mask_selection", d.mask_selection == MaskSelection::box_agreement ? "box_agreement" : "iou_score"}}},
            {"depth_max", cfg.depth_max}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig cfg;
    Block root(j, "");
    read_backbone(root.child("backbone"), cfg.backbone);
    read_decoder(root.child("decoder"), cfg.decoder);
    root.read("depth_max", cfg.depth_max);
    root.finish();
    cfg.validate();
    return cfg;
}

json train_config_to_json(const TrainConfig& cfg) {
    json j = {{"phase", phase_name(cfg.phase)},
              {"epochs", cfg.epochs},
              {"batch_size", cfg.batch_size},
              {"lr0", cfg.lr0},
              {"weight_decay", cfg.weight_decay},
              {"optimizer", cfg.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
              {"momentum", cfg.momentum},
              {"beta1", cfg.beta1},
              {"beta2", cfg.beta2},
              {"clip_norm", cfg.clip_norm},
              {"noise_frac", cfg.noise_frac},
              {"flip_prob", cfg.flip_prob},
              {"freeze",
               {{"prompt_encoder", cfg.freeze.prompt_encoder},
                {"iou_head", cfg.freeze.iou_head},
                {"transformer_branch", cfg.freeze.transformer_branch}}},
              {"seed", cfg.seed},
              {"loss",
               {{"w_focal", cfg.loss.weights.focal},
                {"w_dice", cfg.loss.weights.dice},
                {"w_mse", cfg.loss.weights.mse},
                {"gamma", cfg.loss.gamma},
                {"alpha", cfg.loss.alpha},
                {"eps", cfg.loss.eps}}}};
    j["min_mask_area"] = cfg.min_mask_area ? json(*cfg.min_mask_area) : json(nullptr);
    return j;
}

TrainConfig train_config_from_json(const json& j) {
    json body = j;
    const std::string phase = body.value("phase", "finetune");
    body.erase("phase");
    TrainConfig cfg = phase == "pretrain" ? TrainConfig::pretrain_defaults() : TrainConfig::finetune_defaults();
    if (body.contains("loss")) {
        read_loss(Block(body.at("loss"), "loss"), cfg.loss);
        body.erase("loss");
    }
    read_train(Block(body, "train"), cfg);
    return cfg;
}

json to_json(const RunConfig& cfg) {
    json model = model_config_to_json(cfg.model);
    json train = train_config_to_json(cfg.train);
    json loss = train["loss"];
    train.erase("loss");
    train.erase("phase");
    json data = {{"depth_max", cfg.model.depth_max},
                 {"pseudo_corruption", cfg.data.pseudo_corruption},
                 {"synth",
                  {{"count", cfg.data.synth_count},
                   {"size", cfg.data.synth.size},
                   {"planes_min", cfg.data.synth.planes_min},
                   {"planes_max", cfg.data.synth.planes_max},
                   {"depth_min", cfg.data.synth.depth_min},
                   {"depth_max", cfg.data.synth.depth_max},
                   {"clutter", cfg.data.synth.clutter}}}};
    data["manifest"] = cfg.data.manifest ? json(cfg.data.manifest->string()) : json(nullptr);
    json detector = {{"kind", cfg.detector.kind == DetectorKind::oracle ? "oracle" : "external"},
                     {"noise_frac", cfg.detector.noise_frac},
                     {"score_thresh", cfg.detector.score_thresh},
                     {"max_dets", cfg.detector.max_dets}};
    detector["weights_path"] = cfg.detector.weights_path ? json(cfg.detector.weights_path->string()) : json(nullptr);
    json io = {{"out_dir", cfg.io.out_dir.string()}};
    io["init"] = cfg.io.init_checkpoint ? json(cfg.io.init_checkpoint->string()) : json(nullptr);
    return {{"phase", phase_name(cfg.phase)},
            {"seed", cfg.seed},
            {"data", data},
            {"backbone", model["backbone"]},
            {"decoder", model["decoder"]},
            {"loss", loss},
            {"detector", detector},
            {"train", train},
            {"eval", {{"noise_sweep", cfg.eval.noise_sweep}}},
            {"io", io}};
}

}  // namespace planesam
