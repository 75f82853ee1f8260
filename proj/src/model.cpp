#include "planesam/model.hpp"

#include "planesam/errors.hpp"

namespace planesam {

void ModelConfig::validate() const {
    backbone.validate();
    decoder.validate(backbone.embed_dim);
    if (!(depth_max > 0.0f)) throw ConfigError("data.depth_max must be positive");
}

PlaneSamModel::PlaneSamModel(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_((cfg.validate(), cfg)),
      rng_(seed),
      backbone_(store_, cfg_.backbone, rng_),
      prompt_(store_, cfg_.backbone.embed_dim, cfg_.backbone.image_size, rng_),
      decoder_(store_, cfg_.backbone.embed_dim, cfg_.decoder, rng_) {}

ImageEmbedding PlaneSamModel::embed(const RgbdSample& sample, bool use_cnn_branch) const {
    const int S = cfg_.backbone.image_size;
    if (sample.rgb.height != S || sample.rgb.width != S || sample.depth.height != S || sample.depth.width != S) {
        throw ShapeError("sample " + sample.id + " is not " + std::to_string(S) + "x" + std::to_string(S));
    }
    auto rgb = ag::constant(rgb_to_tensor(sample.rgb));
    auto depth = ag::constant(depth_to_tensor(sample.depth, cfg_.depth_max));
    return backbone_.forward(rgb, depth, use_cnn_branch);
}

MaskTriplet PlaneSamModel::decode(const ImageEmbedding& embedding, const BoxPrompt& box) const {
    auto prompt = encode_box_prompt(prompt_, box, cfg_.backbone.image_size);
    return decoder_(embedding, prompt, prompt_, cfg_.backbone.image_size);
}

std::vector<PromptPrediction> predict(const PlaneSamModel& model, const RgbdSample& sample,
                                      const std::vector<BoxPrompt>& boxes) {
    ag::NoGradGuard no_grad;
    std::vector<PromptPrediction> out;
    if (boxes.empty()) return out;
    const int S = model.config().backbone.image_size;
    auto embedding = model.embed(sample);
    for (const auto& box : boxes) {
        auto triplet = model.decode(embedding, box);
        const auto scores = triplet.iou_scores->value.span();
        const int k = model.config().decoder.mask_selection == MaskSelection::box_agreement
                          ? choose_mask_for_box(triplet.logits->value.span(), scores, S, S, box)
                          : choose_mask(scores);
        const std::size_t plane = static_cast<std::size_t>(S) * S;
        std::span<const float> row(triplet.logits->value.data() + k * plane, plane);
        out.push_back({box, k, triplet.iou_scores->value[static_cast<std::size_t>(k)], binarize_mask(row, S, S)});
    }
    return out;
}

}  // namespace planesam
