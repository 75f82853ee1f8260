// Forward wall time of the backbone with and without the depth branch at the
// toy default config, plus one decode and one fine-tune step for scale.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <vector>

#include "planesam/pipeline.hpp"

using namespace planesam;

namespace {

double median_ms(const std::function<void()>& fn, int reps) {
    std::vector<double> t;
    fn();
    for (int r = 0; r < reps; ++r) {
        const auto start = std::chrono::steady_clock::now();
        fn();
        t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
    }
    std::nth_element(t.begin(), t.begin() + static_cast<long>(t.size() / 2), t.end());
    return t[t.size() / 2];
}

}  // namespace

int main(int argc, char** argv) {
    const int reps = argc > 1 ? std::max(1, std::atoi(argv[1])) : 20;
    ModelConfig cfg;
    PlaneSamModel model(cfg, 1);
    SceneConfig scene;
    scene.size = cfg.backbone.image_size;
    auto samples = synthetic_dataset(2, scene, 3);
    const auto& s = samples[0];

    double dual = 0.0, plain = 0.0, decode = 0.0;
    {
        ag::NoGradGuard no_grad;
        dual = median_ms([&] { model.embed(s, true); }, reps);
        plain = median_ms([&] { model.embed(s, false); }, reps);
        auto emb = model.embed(s);
        const auto box = tight_box(s.annotation->masks[s.annotation->plane_indices()[0]]);
        decode = median_ms([&] { model.decode(emb, box); }, reps);
    }
    TrainConfig tc = TrainConfig::finetune_defaults();
    tc.batch_size = 2;
    Trainer trainer(model, tc, 1000);
    const double step = median_ms([&] { trainer.finetune_step(samples); }, std::max(1, reps / 5));

    std::printf("image %d, patch %d, embed %d, blocks %d\n", cfg.backbone.image_size, cfg.backbone.patch_size,
                cfg.backbone.embed_dim, cfg.backbone.blocks);
    std::printf("%-28s %10.2f ms\n", "backbone rgb-only", plain);
    std::printf("%-28s %10.2f ms  (%.3fx)\n", "backbone dual", dual, dual / plain);
    std::printf("%-28s %10.2f ms\n", "decode one box", decode);
    std::printf("%-28s %10.2f ms\n", "fine-tune step, batch 2", step);
}
