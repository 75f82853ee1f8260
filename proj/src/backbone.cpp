#include "planesam/backbone.hpp"

#include <string>

#include "planesam/errors.hpp"

namespace planesam {

void BackboneConfig::validate() const {
    if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0) {
        throw ConfigError("backbone.image_size must be a positive multiple of backbone.patch_size");
    }
    if (embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0) {
        throw ConfigError("backbone.embed_dim must be a positive multiple of backbone.heads");
    }
    if (embed_dim % 8 != 0) throw ConfigError("backbone.embed_dim must be divisible by 8");
    if (blocks <= 0) throw ConfigError("backbone.blocks must be positive");
    if (cnn_channels <= 0) throw ConfigError("backbone.cnn_channels must be positive");
    if (!(mlp_ratio > 0.0f)) throw ConfigError("backbone.mlp_ratio must be positive");
}

EncoderBlock::EncoderBlock(nn::ParameterStore& store, const std::string& name, const BackboneConfig& cfg,
                           Rng& rng)
    : heads_(cfg.heads),
      norm1_(store, name + ".norm1", cfg.embed_dim),
      norm2_(store, name + ".norm2", cfg.embed_dim),
      q_(store, name + ".attn.q", cfg.embed_dim, cfg.embed_dim, rng),
      k_(store, name + ".attn.k", cfg.embed_dim, cfg.embed_dim, rng),
      v_(store, name + ".attn.v", cfg.embed_dim, cfg.embed_dim, rng),
      proj_(store, name + ".attn.proj", cfg.embed_dim, cfg.embed_dim, rng),
      fc1_(store, name + ".mlp.fc1", cfg.embed_dim, cfg.mlp_dim(), rng),
      fc2_(store, name + ".mlp.fc2", cfg.mlp_dim(), cfg.embed_dim, rng) {}

ag::Var EncoderBlock::operator()(const ag::Var& tokens) const {
    auto h = norm1_(tokens);
    auto attn = proj_(ag::attention(q_(h), k_(h), v_(h), heads_));
    auto x = ag::add(tokens, attn);
    auto m = fc2_(ag::gelu(fc1_(norm2_(x))));
    return ag::add(x, m);
}

LwcnnBlock::LwcnnBlock(nn::ParameterStore& store, const std::string& name, const BackboneConfig& cfg, Rng& rng)
    : grid_(cfg.grid()),
      rgb_reduce_(store, name + ".rgb_reduce", cfg.embed_dim, cfg.cnn_channels, rng),
      conv1_(store, name + ".conv1", 2 * cfg.cnn_channels, cfg.cnn_channels, 3, 1, 1, rng),
      conv2_(store, name + ".conv2", cfg.cnn_channels, cfg.cnn_channels, 3, 1, 1, rng),
      out_proj_(store, name + ".out_proj", cfg.cnn_channels, cfg.embed_dim, rng, /*zero_init=*/true) {}

LwcnnBlock::Output LwcnnBlock::operator()(const ag::Var& tokens, const ag::Var& depth_state) const {
    auto rgb = nn::tokens_to_grid(rgb_reduce_(tokens), grid_, grid_);
    auto fused = ag::concat_rows({rgb, depth_state});
    auto delta = conv2_(ag::gelu(conv1_(fused)));
    auto state = ag::add(depth_state, delta);
    auto update = out_proj_(nn::grid_to_tokens(state));
    return {ag::add(tokens, update), state};
}

DualBackbone::DualBackbone(nn::ParameterStore& store, const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const int G = cfg_.grid();
    const int C = cfg_.embed_dim;
    patch_proj_ = nn::Conv2d(store, "transformer.patch_embed", 3, C, cfg_.patch_size, cfg_.patch_size, 0, rng);
    pos_embed_ = store.create("transformer.pos_embed", nn::normal_init({G * G, C}, 0.02f, rng));
    stem_ = nn::Conv2d(store, "stem", 1, cfg_.cnn_channels, cfg_.patch_size, cfg_.patch_size, 0, rng);
    for (int b = 0; b < cfg_.blocks; ++b) {
        lwcnn_.emplace_back(store, "cnn.blocks." + std::to_string(b), cfg_, rng);
        encoder_.emplace_back(store, "transformer.blocks." + std::to_string(b), cfg_, rng);
    }
    neck_proj_ = nn::Linear(store, "transformer.neck.proj", C, C, rng);
    neck_norm_ = nn::LayerNorm(store, "transformer.neck.norm", C);
}

ag::Var DualBackbone::patch_embed(const ag::Var& rgb) const {
    require_shape(rgb->value, {3, cfg_.image_size, cfg_.image_size}, "patch_embed input");
    auto tokens = nn::grid_to_tokens(patch_proj_(rgb));
    return ag::add(tokens, pos_embed_);
}

ag::Var DualBackbone::depth_stem(const ag::Var& depth) const {
    require_shape(depth->value, {1, cfg_.image_size, cfg_.image_size}, "depth stem input");
    return stem_(depth);
}

LwcnnBlock::Output DualBackbone::lwcnn_block_forward(const ag::Var& tokens, const ag::Var& depth_state,
                                                     int stage) const {
    if (stage < 0 || stage >= cfg_.blocks) throw ShapeError("lwcnn stage out of range");
    const int G = cfg_.grid();
    require_shape(tokens->value, {G * G, cfg_.embed_dim}, "lwcnn tokens");
    require_shape(depth_state->value, {cfg_.cnn_channels, G, G}, "lwcnn depth state");
    return lwcnn_[static_cast<std::size_t>(stage)](tokens, depth_state);
}

ag::Var DualBackbone::encoder_block_forward(const ag::Var& tokens, int stage) const {
    if (stage < 0 || stage >= cfg_.blocks) throw ShapeError("encoder stage out of range");
    const int G = cfg_.grid();
    require_shape(tokens->value, {G * G, cfg_.embed_dim}, "encoder tokens");
    return encoder_[static_cast<std::size_t>(stage)](tokens);
}

namespace {

void require_finite(const ag::Var& v, int stage) {
    if (!v->value.all_finite()) {
        throw NumericFault("non-finite activations after backbone stage " + std::to_string(stage));
    }
}

}  // namespace

ImageEmbedding DualBackbone::forward(const ag::Var& rgb, const ag::Var& depth, bool use_cnn_branch) const {
    auto tokens = patch_embed(rgb);
    ag::Var state;
    if (use_cnn_branch) state = depth_stem(depth);
    for (int b = 0; b < cfg_.blocks; ++b) {
        if (use_cnn_branch) {
            auto out = lwcnn_[static_cast<std::size_t>(b)](tokens, state);
            tokens = out.tokens;
            state = out.depth_state;
        }
        tokens = encoder_[static_cast<std::size_t>(b)](tokens);
        require_finite(tokens, b);
    }
    auto features = neck_norm_(neck_proj_(tokens));
    require_finite(features, cfg_.blocks);
    return {features, cfg_.grid()};
}

ParameterPartition parameter_partition(const nn::ParameterStore& store) {
    ParameterPartition p;
    for (const auto& np : store.parameters()) {
        const std::size_t n = np.var->value.numel();
        if (np.name.rfind("transformer.", 0) == 0) {
            p.transformer += n;
        } else if (np.name.rfind("cnn.", 0) == 0 || np.name.rfind("stem.", 0) == 0) {
            p.cnn += n;
        } else {
            p.other += n;
        }
    }
    return p;
}

Tensor rgb_to_tensor(const Raster& rgb) {
    if (rgb.channels != 3) throw ShapeError("rgb raster must have 3 channels");
    Tensor t({3, rgb.height, rgb.width});
    const std::size_t plane = static_cast<std::size_t>(rgb.height) * rgb.width;
    for (std::size_t p = 0; p < plane; ++p)
        for (std::size_t c = 0; c < 3; ++c) t[c * plane + p] = rgb.data[p * 3 + c] - 0.5f;
    return t;
}

Tensor depth_to_tensor(const Raster& depth, float d_max) {
    auto norm = normalize_depth(depth, d_max);
    return Tensor({1, depth.height, depth.width}, std::move(norm.data));
}

}  // namespace planesam
