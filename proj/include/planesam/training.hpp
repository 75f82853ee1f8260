#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "planesam/data.hpp"
#include "planesam/losses.hpp"
#include "planesam/model.hpp"

namespace planesam {

enum class Phase { pretrain, finetune };
enum class OptimizerKind { adam, sgd };

struct FreezePolicy {
    bool prompt_encoder = true;
    bool iou_head = true;
    bool transformer_branch = false;
};

struct TrainConfig {
    Phase phase = Phase::pretrain;
    int epochs = 40;
    int batch_size = 12;
    double lr0 = 1e-4;
    double weight_decay = 0.01;
    OptimizerKind optimizer = OptimizerKind::adam;
    double momentum = 0.9;  // sgd only
    double beta1 = 0.9;
    double beta2 = 0.999;
    double clip_norm = 1.0;
    LossConfig loss;
    float noise_frac = 0.0f;
    float flip_prob = 0.0f;
    // Pseudo-label area threshold in pixels; unset = 0.1% of the image area.
    std::optional<std::int64_t> min_mask_area;
    FreezePolicy freeze;
    std::uint64_t seed = 0;

    static TrainConfig pretrain_defaults();
    static TrainConfig finetune_defaults();
    void validate() const;
};

// lr0 * 0.5 * (1 + cos(pi * step / total_steps)).
double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr0);

struct TrainableSet {
    std::vector<std::string> trainable;
    std::vector<std::string> frozen;
};

// Marks parameters trainable or frozen by group. Every parameter must belong
// to a known group (transformer, cnn, stem, prompt, decoder).
TrainableSet apply_freeze_policy(nn::ParameterStore& store, const FreezePolicy& policy);

double global_grad_norm(const nn::ParameterStore& store);
// Scales gradients so their global norm is at most max_norm; returns the norm before clipping.
double clip_grad_norm(nn::ParameterStore& store, double max_norm);

// Adam with decoupled weight decay (w *= 1 - lr*wd before the Adam step), or
// SGD with momentum and L2 decay folded into the gradient. Parameters without
// a gradient in a step are left untouched.
class Optimizer {
public:
    Optimizer(const TrainConfig& cfg, const nn::ParameterStore& store);
    void step(nn::ParameterStore& store, double lr);

    struct Slot {
        std::string name;
        std::int64_t steps = 0;
        Tensor m;
        Tensor v;
    };
    const std::vector<Slot>& slots() const noexcept { return slots_; }
    std::vector<Slot>& slots() noexcept { return slots_; }
    OptimizerKind kind() const noexcept { return kind_; }

private:
    OptimizerKind kind_;
    double beta1_, beta2_, eps_ = 1e-8, momentum_, weight_decay_;
    std::vector<Slot> slots_;  // parallel to store.parameters()
};

struct PretrainItem {
    RgbdSample sample;
    PseudoLabelSet labels;
};

struct StepReport {
    double loss = 0.0;  // mean over prompts used in this step
    double lr = 0.0;
    int used = 0;
    int skipped = 0;
    double grad_norm = 0.0;
    std::vector<int> chosen;  // min-of-three index per used prompt
    std::vector<BoxPrompt> prompts;
};

// Phase-contract instrumentation.
struct PhaseCounters {
    std::int64_t masks_filtered = 0;
    std::int64_t prompts_jittered = 0;
    std::int64_t flips = 0;
    std::int64_t skipped = 0;
    std::int64_t prompts = 0;
};

class Trainer {
public:
    Trainer(PlaneSamModel& model, const TrainConfig& cfg, std::int64_t total_steps);

    StepReport pretrain_step(const std::vector<PretrainItem>& batch);
    StepReport finetune_step(const std::vector<RgbdSample>& batch);

    const TrainConfig& config() const noexcept { return cfg_; }
    PlaneSamModel& model() noexcept { return model_; }
    const TrainableSet& trainable() const noexcept { return trainable_; }
    std::int64_t step() const noexcept { return step_; }
    std::int64_t total_steps() const noexcept { return total_steps_; }
    double current_lr() const { return cosine_lr(step_, total_steps_, cfg_.lr0); }
    const PhaseCounters& counters() const noexcept { return counters_; }
    Optimizer& optimizer() noexcept { return optimizer_; }
    Rng& rng() noexcept { return rng_; }

    void set_step(std::int64_t step) { step_ = step; }

private:
    struct Prompted {
        const RgbdSample* sample;
        RgbdSample flipped;  // used when `use_flipped`
        bool use_flipped = false;
        BinaryMask mask;
        BoxPrompt box;
    };
    StepReport run(std::vector<Prompted>& prompts, int skipped);
    void maybe_flip(Prompted& p);

    PlaneSamModel& model_;
    TrainConfig cfg_;
    std::int64_t total_steps_;
    std::int64_t step_ = 0;
    Rng rng_;
    TrainableSet trainable_;
    Optimizer optimizer_;
    PhaseCounters counters_;
};

struct EpochLog {
    int epoch = 0;
    double mean_loss = 0.0;
    double lr = 0.0;
    std::int64_t skipped = 0;
};

std::int64_t steps_per_epoch(std::size_t samples, int batch_size);

// Callback after each epoch; returning false stops training early.
using EpochCallback = std::function<bool(const EpochLog&)>;

// Runs `epochs` epochs starting from the trainer's current step. Each epoch
// shuffles the data with the trainer's rng. A row per epoch is appended to
// `log_path` when given.
std::vector<EpochLog> train_pretrain(Trainer& trainer, const std::vector<PretrainItem>& data, int epochs,
                                     const std::optional<std::filesystem::path>& log_path = std::nullopt,
                                     const EpochCallback& callback = {});
std::vector<EpochLog> train_finetune(Trainer& trainer, const std::vector<RgbdSample>& data, int epochs,
                                     const std::optional<std::filesystem::path>& log_path = std::nullopt,
                                     const EpochCallback& callback = {});

// ---- checkpoints ------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointState {
    ModelConfig model;
    TrainConfig train;
    std::int64_t step = 0;
    std::int64_t total_steps = 0;
    std::string rng_state;
    std::vector<std::pair<std::string, Tensor>> parameters;
    bool has_optimizer = false;
    OptimizerKind optimizer = OptimizerKind::adam;
    std::vector<Optimizer::Slot> slots;
};

// Written to `path.partial` and renamed when complete.
void save_checkpoint(const std::filesystem::path& path, const PlaneSamModel& model, const Trainer* trainer,
                     const TrainConfig& cfg);
// Throws CheckpointError on truncation, corruption or version mismatch.
CheckpointState read_checkpoint(const std::filesystem::path& path);
// Copies stored values into a model built from the same config.
void restore_parameters(PlaneSamModel& model, const CheckpointState& state);
// Restores optimizer slots, step counter and rng.
void restore_trainer(Trainer& trainer, const CheckpointState& state);

}  // namespace planesam
