#pragma once

#include <cstdint>
#include <vector>

#include "planesam/backbone.hpp"
#include "planesam/promptdecoder.hpp"

namespace planesam {

struct ModelConfig {
    BackboneConfig backbone;
    DecoderConfig decoder;
    float depth_max = kDefaultDepthMax;
    void validate() const;
};

// Encoder, prompt encoder and mask decoder sharing one parameter store.
class PlaneSamModel {
public:
    PlaneSamModel(const ModelConfig& cfg, std::uint64_t seed);
    PlaneSamModel(const PlaneSamModel&) = delete;
    PlaneSamModel& operator=(const PlaneSamModel&) = delete;

    const ModelConfig& config() const noexcept { return cfg_; }
    nn::ParameterStore& store() noexcept { return store_; }
    const nn::ParameterStore& store() const noexcept { return store_; }
    const DualBackbone& backbone() const noexcept { return backbone_; }
    const PromptEncoder& prompt_encoder() const noexcept { return prompt_; }

    // Sample rasters must already be image_size x image_size.
    ImageEmbedding embed(const RgbdSample& sample, bool use_cnn_branch = true) const;
    MaskTriplet decode(const ImageEmbedding& embedding, const BoxPrompt& box) const;

private:
    ModelConfig cfg_;
    nn::ParameterStore store_;
    Rng rng_;
    DualBackbone backbone_;
    PromptEncoder prompt_;
    MaskDecoder decoder_;
};

struct PromptPrediction {
    BoxPrompt box;
    int chosen_mask = 0;
    float iou_score = 0.0f;
    BinaryMask mask;
};

// Inference without gradient tracking: one prediction per box.
std::vector<PromptPrediction> predict(const PlaneSamModel& model, const RgbdSample& sample,
                                      const std::vector<BoxPrompt>& boxes);

}  // namespace planesam
