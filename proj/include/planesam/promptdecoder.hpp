#pragma once

#include <array>
#include <vector>

#include "planesam/autograd.hpp"
#include "planesam/backbone.hpp"
#include "planesam/data.hpp"
#include "planesam/nn.hpp"

namespace planesam {

// Two corner tokens for one box: [2, embed_dim].
struct PromptTokens {
    ag::Var tokens;
};

// Three mask logit maps at input resolution plus one IoU score per map.
struct MaskTriplet {
    ag::Var logits;      // [3, S, S]
    ag::Var iou_scores;  // [3], in [0, 1]
};

// Box prompt encoder. Corners are embedded with random Fourier features of
// their normalised coordinates plus one learned term per corner; the same
// features evaluated at cell centres give the dense image positional code.
class PromptEncoder {
public:
    PromptEncoder(nn::ParameterStore& store, int embed_dim, int image_size, Rng& rng);

    PromptTokens encode_box(const BoxPrompt& box) const;
    // [G*G, embed_dim], row-major over the grid.
    ag::Var dense_positional(int grid) const;
    const ag::Var& no_mask_embed() const noexcept { return no_mask_; }

private:
    std::vector<float> fourier(float u, float v) const;  // u, v in [0, 1]

    int embed_dim_;
    int image_size_;
    ag::Var gaussian_;  // [2, embed_dim / 2], fixed
    ag::Var corner_embed_;
    ag::Var no_mask_;
};

// Throws PromptError for degenerate boxes or boxes outside the image.
PromptTokens encode_box_prompt(const PromptEncoder& encoder, const BoxPrompt& box, int image_size);

enum class MaskHeadInit { shared, independent };
// How one of the three candidates is reported at inference.
enum class MaskSelection { box_agreement, iou_score };

struct DecoderConfig {
    int depth = 2;
    int heads = 4;
    float mlp_ratio = 4.0f;
    // `shared` starts the three mask tokens and hypernetwork heads from one
    // draw so that early ties send training to mask 0, the mask reported by
    // an uncalibrated IoU head.
    MaskHeadInit mask_head_init = MaskHeadInit::shared;
    // The IoU head never trains here, so its scores are constant; min-of-three
    // training still spreads planes over all three heads. box_agreement picks
    // the candidate whose extent best matches the prompt box and falls back to
    // the IoU score, then the lowest index.
    MaskSelection mask_selection = MaskSelection::box_agreement;
    void validate(int embed_dim) const;
};

class MaskDecoder {
public:
    MaskDecoder(nn::ParameterStore& store, int embed_dim, const DecoderConfig& cfg, Rng& rng);

    MaskTriplet operator()(const ImageEmbedding& embedding, const PromptTokens& prompt, const PromptEncoder& encoder,
                           int output_size) const;

private:
    struct Attention {
        nn::Linear q, k, v, out;
        int heads = 1;
        ag::Var operator()(const ag::Var& query, const ag::Var& key, const ag::Var& value) const;
    };
    struct TwoWayLayer {
        Attention self_attn, token_to_image, image_to_token;
        nn::LayerNorm norm1, norm2, norm3, norm4;
        nn::Mlp mlp;
        bool skip_first_pe = false;
    };
    Attention make_attention(nn::ParameterStore& store, const std::string& name, Rng& rng) const;

    int embed_dim_;
    DecoderConfig cfg_;
    ag::Var iou_token_;
    ag::Var mask_tokens_;  // [3, C]
    std::vector<TwoWayLayer> layers_;
    Attention final_attn_;
    nn::LayerNorm final_norm_;
    nn::ConvTranspose2x2 up1_, up2_;
    nn::LayerNorm up_norm_;
    std::vector<nn::Mlp> hyper_;
    nn::Mlp iou_head_;
};

// logit >= 0 is foreground.
BinaryMask binarize_mask(std::span<const float> logits, int height, int width);
// Highest IoU score; lowest index among equal scores (so 0 when all equal).
int choose_mask(std::span<const float> iou_scores);
// IoU between the tight box of each binarized candidate and `box` (0 for an
// empty candidate). `logits` holds three height*width planes.
std::array<float, 3> box_agreement(std::span<const float> logits, int height, int width, const BoxPrompt& box);
// Highest agreement; equal agreements go to choose_mask over those candidates.
int choose_mask_for_box(std::span<const float> logits, std::span<const float> iou_scores, int height, int width,
                        const BoxPrompt& box);

}  // namespace planesam
