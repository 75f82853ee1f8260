#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "json.hpp"
#include "planesam/data.hpp"
#include "planesam/detector.hpp"
#include "planesam/model.hpp"
#include "planesam/training.hpp"

namespace planesam {

struct DataConfig {
    std::optional<std::filesystem::path> manifest;
    SceneConfig synth;
    int synth_count = 20;
    // Area change applied to annotations to make imperfect pseudo-labels.
    float pseudo_corruption = 0.2f;
};

struct EvalConfig {
    std::vector<float> noise_sweep{0.0f, 0.1f, 0.2f, 0.3f};
};

struct IoConfig {
    std::filesystem::path out_dir = "runs";
    std::optional<std::filesystem::path> init_checkpoint;
};

// Everything one run needs, read from one JSON file. The `loss` block of the
// file lands in train.loss; `data.depth_max` lands in model.depth_max.
struct RunConfig {
    Phase phase = Phase::finetune;
    std::uint64_t seed = 0;
    DataConfig data;
    ModelConfig model;
    DetectorConfig detector;
    TrainConfig train = TrainConfig::finetune_defaults();
    EvalConfig eval;
    IoConfig io;

    // Throws ConfigError naming the offending key path.
    void validate() const;
};

RunConfig default_run_config(Phase phase);
// Unknown keys and type mismatches are ConfigErrors with the key path. A
// phase override (the running command) replaces the file's `phase` and picks
// the defaults, so one file can serve both training phases.
RunConfig parse_run_config(const nlohmann::json& j, std::optional<Phase> phase_override = std::nullopt);
RunConfig load_run_config(const std::filesystem::path& path, std::optional<Phase> phase_override = std::nullopt);
nlohmann::json to_json(const RunConfig& cfg);

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

const char* phase_name(Phase p);

}  // namespace planesam
