#pragma once

#include <vector>

#include "planesam/data.hpp"
#include "planesam/model.hpp"
#include "planesam/training.hpp"

namespace planesam::testing {

inline ModelConfig tiny_model_config() {
    ModelConfig cfg;
    cfg.backbone.image_size = 32;
    cfg.backbone.patch_size = 8;
    cfg.backbone.embed_dim = 32;
    cfg.backbone.blocks = 2;
    cfg.backbone.heads = 2;
    cfg.backbone.cnn_channels = 8;
    cfg.decoder.heads = 2;
    return cfg;
}

inline std::vector<RgbdSample> synthetic_samples(int count, int size, std::uint64_t seed) {
    SceneConfig sc;
    sc.size = size;
    sc.planes_min = 2;
    sc.planes_max = 4;
    std::vector<RgbdSample> out;
    for (int i = 0; i < count; ++i) out.push_back(generate_synthetic_scene(seed + static_cast<std::uint64_t>(i), sc).sample);
    return out;
}

inline std::vector<PretrainItem> pseudo_labelled(const std::vector<RgbdSample>& samples, float corruption,
                                                 std::uint64_t seed) {
    Rng rng(seed);
    std::vector<PretrainItem> out;
    for (const auto& s : samples) out.push_back({s, corrupt_annotation(*s.annotation, corruption, rng)});
    return out;
}

}  // namespace planesam::testing
