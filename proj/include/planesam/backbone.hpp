#pragma once

#include <cstddef>
#include <vector>

#include "planesam/autograd.hpp"
#include "planesam/data.hpp"
#include "planesam/nn.hpp"

namespace planesam {

struct BackboneConfig {
    int image_size = 256;
    int patch_size = 16;
    int embed_dim = 192;
    int blocks = 12;
    int heads = 3;
    int cnn_channels = 32;
    float mlp_ratio = 4.0f;

    int grid() const noexcept { return image_size / patch_size; }
    int mlp_dim() const noexcept { return static_cast<int>(static_cast<float>(embed_dim) * mlp_ratio); }
    // Shape constraints only; the branch-size ratio is checked on a built model.
    void validate() const;
};

// Output of the encoder: G*G tokens of width embed_dim, row-major over the grid.
struct ImageEmbedding {
    ag::Var features;  // [G*G, embed_dim]
    int grid = 0;
};

struct ParameterPartition {
    std::size_t transformer = 0;  // transformer.*
    std::size_t cnn = 0;          // cnn.* and stem.* (the depth branch)
    std::size_t other = 0;        // prompt encoder and decoder
    std::size_t total() const noexcept { return transformer + cnn + other; }
};

// One pre-norm ViT encoder block.
class EncoderBlock {
public:
    EncoderBlock(nn::ParameterStore& store, const std::string& name, const BackboneConfig& cfg, Rng& rng);
    ag::Var operator()(const ag::Var& tokens) const;

private:
    int heads_;
    nn::LayerNorm norm1_, norm2_;
    nn::Linear q_, k_, v_, proj_;
    nn::Linear fc1_, fc2_;
};

// Lightweight fusion block run before each encoder block. Reads the RGB
// tokens and the carried depth-path state, updates the state with two 3x3
// convolutions, and adds a projection of the new state back onto the tokens.
// The projection starts at zero so the block is an exact identity on the
// token path until it has been trained.
class LwcnnBlock {
public:
    LwcnnBlock(nn::ParameterStore& store, const std::string& name, const BackboneConfig& cfg, Rng& rng);

    struct Output {
        ag::Var tokens;
        ag::Var depth_state;
    };
    Output operator()(const ag::Var& tokens, const ag::Var& depth_state) const;

private:
    int grid_;
    nn::Linear rgb_reduce_;
    nn::Conv2d conv1_, conv2_;
    nn::Linear out_proj_;
};

class DualBackbone {
public:
    DualBackbone(nn::ParameterStore& store, const BackboneConfig& cfg, Rng& rng);

    const BackboneConfig& config() const noexcept { return cfg_; }

    // rgb [3, S, S] -> tokens [G*G, C] (patch projection + positional term).
    ag::Var patch_embed(const ag::Var& rgb) const;
    // depth [1, S, S] -> depth-path state [cnn_channels, G, G].
    ag::Var depth_stem(const ag::Var& depth) const;
    LwcnnBlock::Output lwcnn_block_forward(const ag::Var& tokens, const ag::Var& depth_state, int stage) const;
    ag::Var encoder_block_forward(const ag::Var& tokens, int stage) const;

    // Full encoder on normalised inputs. With use_cnn_branch = false the LWCNN
    // blocks and the stem are skipped entirely (the RGB-only encoder).
    ImageEmbedding forward(const ag::Var& rgb, const ag::Var& depth, bool use_cnn_branch = true) const;

private:
    BackboneConfig cfg_;
    nn::Conv2d patch_proj_;
    ag::Var pos_embed_;
    nn::Conv2d stem_;
    std::vector<LwcnnBlock> lwcnn_;
    std::vector<EncoderBlock> encoder_;
    nn::Linear neck_proj_;
    nn::LayerNorm neck_norm_;
};

ParameterPartition parameter_partition(const nn::ParameterStore& store);

// rgb [0,1] H x W x 3 -> [3, H, W] centred on 0; depth -> [1, H, W] in [0, 1].
Tensor rgb_to_tensor(const Raster& rgb);
Tensor depth_to_tensor(const Raster& depth, float d_max);

}  // namespace planesam
