#include "planesam/promptdecoder.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "planesam/errors.hpp"

namespace planesam {

PromptEncoder::PromptEncoder(nn::ParameterStore& store, int embed_dim, int image_size, Rng& rng)
    : embed_dim_(embed_dim), image_size_(image_size) {
    if (embed_dim % 2 != 0) throw ConfigError("prompt embedding width must be even");
    gaussian_ = store.create_buffer("prompt.pe_gaussian", nn::normal_init({2, embed_dim / 2}, 1.0f, rng));
    corner_embed_ = store.create("prompt.corner_embed", nn::normal_init({2, embed_dim}, 1.0f, rng));
    no_mask_ = store.create("prompt.no_mask_embed", nn::normal_init({embed_dim}, 0.02f, rng));
}

std::vector<float> PromptEncoder::fourier(float u, float v) const {
    const int half = embed_dim_ / 2;
    std::vector<float> out(static_cast<std::size_t>(embed_dim_));
    const double cu = 2.0 * u - 1.0, cv = 2.0 * v - 1.0;
    const float* g = gaussian_->value.data();
    for (int j = 0; j < half; ++j) {
        const double phase = 2.0 * std::numbers::pi * (cu * g[j] + cv * g[half + j]);
        out[static_cast<std::size_t>(j)] = static_cast<float>(std::sin(phase));
        out[static_cast<std::size_t>(half + j)] = static_cast<float>(std::cos(phase));
    }
    return out;
}

PromptTokens PromptEncoder::encode_box(const BoxPrompt& box) const {
    const bool finite = std::isfinite(box.x_min) && std::isfinite(box.y_min) && std::isfinite(box.x_max) &&
                        std::isfinite(box.y_max);
    if (!finite || !box.valid_for(image_size_, image_size_)) {
        throw PromptError("degenerate or out-of-image box prompt");
    }
    const float s = static_cast<float>(image_size_);
    auto a = fourier(box.x_min / s, box.y_min / s);
    auto b = fourier(box.x_max / s, box.y_max / s);
    a.insert(a.end(), b.begin(), b.end());
    auto pe = ag::constant(Tensor({2, embed_dim_}, std::move(a)));
    return {ag::add(pe, corner_embed_)};
}

ag::Var PromptEncoder::dense_positional(int grid) const {
    Tensor t({grid * grid, embed_dim_});
    for (int y = 0; y < grid; ++y) {
        for (int x = 0; x < grid; ++x) {
            auto f = fourier((static_cast<float>(x) + 0.5f) / static_cast<float>(grid),
                             (static_cast<float>(y) + 0.5f) / static_cast<float>(grid));
            std::copy(f.begin(), f.end(), t.data() + static_cast<std::size_t>(y * grid + x) * embed_dim_);
        }
    }
    return ag::constant(std::move(t));
}

PromptTokens encode_box_prompt(const PromptEncoder& encoder, const BoxPrompt& box, int image_size) {
    if (!box.valid_for(image_size, image_size)) throw PromptError("degenerate or out-of-image box prompt");
    return encoder.encode_box(box);
}

void DecoderConfig::validate(int embed_dim) const {
    if (depth <= 0) throw ConfigError("decoder.depth must be positive");
    if (heads <= 0 || embed_dim % heads != 0) throw ConfigError("decoder.heads must divide backbone.embed_dim");
    if (!(mlp_ratio > 0.0f)) throw ConfigError("decoder.mlp_ratio must be positive");
}

ag::Var MaskDecoder::Attention::operator()(const ag::Var& query, const ag::Var& key, const ag::Var& value) const {
    return out(ag::attention(q(query), k(key), v(value), heads));
}

MaskDecoder::Attention MaskDecoder::make_attention(nn::ParameterStore& store, const std::string& name,
                                                   Rng& rng) const {
    const int C = embed_dim_;
    Attention a;
    a.q = nn::Linear(store, name + ".q", C, C, rng);
    a.k = nn::Linear(store, name + ".k", C, C, rng);
    a.v = nn::Linear(store, name + ".v", C, C, rng);
    a.out = nn::Linear(store, name + ".out", C, C, rng);
    a.heads = cfg_.heads;
    return a;
}

namespace {

void copy_values(const nn::Mlp& from, nn::Mlp& to) {
    for (std::size_t i = 0; i < from.layers.size(); ++i) {
        to.layers[i].weight->value = from.layers[i].weight->value;
        to.layers[i].bias->value = from.layers[i].bias->value;
    }
}

// LayerNorm over channels of a [C, H, W] grid.
ag::Var channel_norm(const nn::LayerNorm& norm, const ag::Var& grid) {
    const int H = grid->value.dim(1), W = grid->value.dim(2);
    return nn::tokens_to_grid(norm(nn::grid_to_tokens(grid)), H, W);
}

}  // namespace

MaskDecoder::MaskDecoder(nn::ParameterStore& store, int embed_dim, const DecoderConfig& cfg, Rng& rng)
    : embed_dim_(embed_dim), cfg_(cfg) {
    cfg_.validate(embed_dim);
    const int C = embed_dim;
    const int hidden = static_cast<int>(static_cast<float>(C) * cfg_.mlp_ratio);
    iou_token_ = store.create("decoder.iou_token", nn::normal_init({1, C}, 1.0f, rng));
    Tensor tokens = nn::normal_init({3, C}, 1.0f, rng);
    if (cfg_.mask_head_init == MaskHeadInit::shared) {
        for (int m = 1; m < 3; ++m) std::copy(tokens.data(), tokens.data() + C, tokens.data() + m * C);
    }
    mask_tokens_ = store.create("decoder.mask_tokens", std::move(tokens));

    for (int l = 0; l < cfg_.depth; ++l) {
        const std::string name = "decoder.layers." + std::to_string(l);
        TwoWayLayer layer;
        layer.self_attn = make_attention(store, name + ".self_attn", rng);
        layer.norm1 = nn::LayerNorm(store, name + ".norm1", C);
        layer.token_to_image = make_attention(store, name + ".token_to_image", rng);
        layer.norm2 = nn::LayerNorm(store, name + ".norm2", C);
        layer.mlp = nn::Mlp(store, name + ".mlp", {C, hidden, C}, rng);
        layer.norm3 = nn::LayerNorm(store, name + ".norm3", C);
        layer.image_to_token = make_attention(store, name + ".image_to_token", rng);
        layer.norm4 = nn::LayerNorm(store, name + ".norm4", C);
        layer.skip_first_pe = l == 0;
        layers_.push_back(std::move(layer));
    }
    final_attn_ = make_attention(store, "decoder.final_attn", rng);
    final_norm_ = nn::LayerNorm(store, "decoder.final_norm", C);

    up1_ = nn::ConvTranspose2x2(store, "decoder.upscale.conv1", C, C / 4, rng);
    up_norm_ = nn::LayerNorm(store, "decoder.upscale.norm", C / 4);
    up2_ = nn::ConvTranspose2x2(store, "decoder.upscale.conv2", C / 4, C / 8, rng);

    for (int m = 0; m < 3; ++m) {
        hyper_.emplace_back(store, "decoder.hyper." + std::to_string(m), std::vector<int>{C, C, C, C / 8}, rng);
        if (m > 0 && cfg_.mask_head_init == MaskHeadInit::shared) copy_values(hyper_[0], hyper_.back());
    }
    iou_head_ = nn::Mlp(store, "decoder.iou_head", {C, C, C, 3}, rng, /*zero_init_last=*/true);
}

MaskTriplet MaskDecoder::operator()(const ImageEmbedding& embedding, const PromptTokens& prompt,
                                    const PromptEncoder& encoder, int output_size) const {
    const int C = embed_dim_;
    const int G = embedding.grid;
    require_shape(embedding.features->value, {G * G, C}, "decoder image embedding");
    require_shape(prompt.tokens->value, {2, C}, "decoder prompt tokens");

    auto query_pe = ag::concat_rows({iou_token_, mask_tokens_, prompt.tokens});
    auto queries = query_pe;
    auto keys = ag::add_row_vector(embedding.features, encoder.no_mask_embed());
    auto key_pe = encoder.dense_positional(G);

    for (const auto& layer : layers_) {
        if (layer.skip_first_pe) {
            queries = layer.self_attn(queries, queries, queries);
        } else {
            auto q = ag::add(queries, query_pe);
            queries = ag::add(queries, layer.self_attn(q, q, queries));
        }
        queries = layer.norm1(queries);
        auto q = ag::add(queries, query_pe);
        auto k = ag::add(keys, key_pe);
        queries = layer.norm2(ag::add(queries, layer.token_to_image(q, k, keys)));
        queries = layer.norm3(ag::add(queries, layer.mlp(queries)));
        q = ag::add(queries, query_pe);
        k = ag::add(keys, key_pe);
        keys = layer.norm4(ag::add(keys, layer.image_to_token(k, q, queries)));
    }
    {
        auto q = ag::add(queries, query_pe);
        auto k = ag::add(keys, key_pe);
        queries = final_norm_(ag::add(queries, final_attn_(q, k, keys)));
    }

    auto grid = nn::tokens_to_grid(keys, G, G);
    auto up = ag::gelu(channel_norm(up_norm_, up1_(grid)));
    up = ag::gelu(up2_(up));  // [C/8, 4G, 4G]
    const int side = 4 * G;
    auto up_flat = ag::reshape(up, {C / 8, side * side});

    std::vector<ag::Var> rows;
    for (int m = 0; m < 3; ++m) rows.push_back(hyper_[static_cast<std::size_t>(m)](ag::slice_rows(queries, 1 + m, 1)));
    auto hyper = ag::concat_rows(rows);  // [3, C/8]
    auto masks = ag::reshape(ag::matmul(hyper, up_flat), {3, side, side});
    masks = ag::resize_bilinear(masks, output_size, output_size);

    auto iou = ag::sigmoid(iou_head_(ag::slice_rows(queries, 0, 1)));
    return {masks, ag::reshape(iou, {3})};
}

BinaryMask binarize_mask(std::span<const float> logits, int height, int width) {
    if (logits.size() != static_cast<std::size_t>(height) * width) throw ShapeError("binarize: size mismatch");
    BinaryMask m(height, width);
    for (std::size_t i = 0; i < logits.size(); ++i) m.bits[i] = logits[i] >= 0.0f ? 1 : 0;
    return m;
}

int choose_mask(std::span<const float> iou_scores) {
    if (iou_scores.empty()) throw InputError("no IoU scores");
    int best = 0;
    for (std::size_t i = 1; i < iou_scores.size(); ++i)
        if (iou_scores[i] > iou_scores[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    return best;
}

namespace {

float box_iou(const BoxPrompt& a, const BoxPrompt& b) {
    const float ix = std::max(0.0f, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
    const float iy = std::max(0.0f, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
    const float inter = ix * iy;
    const float uni = a.width() * a.height() + b.width() * b.height() - inter;
    return uni > 0.0f ? inter / uni : 0.0f;
}

}  // namespace

std::array<float, 3> box_agreement(std::span<const float> logits, int height, int width, const BoxPrompt& box) {
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    if (logits.size() != 3 * plane) throw ShapeError("box_agreement: expected three mask planes");
    std::array<float, 3> out{};
    for (std::size_t k = 0; k < 3; ++k) {
        auto m = binarize_mask(logits.subspan(k * plane, plane), height, width);
        out[k] = m.area() == 0 ? 0.0f : box_iou(tight_box(m), box);
    }
    return out;
}

int choose_mask_for_box(std::span<const float> logits, std::span<const float> iou_scores, int height, int width,
                        const BoxPrompt& box) {
    if (iou_scores.size() != 3) throw InputError("expected three IoU scores");
    const auto agree = box_agreement(logits, height, width, box);
    const float top = *std::max_element(agree.begin(), agree.end());
    // scores of non-top candidates drop below any sigmoid output
    std::array<float, 3> masked{};
    for (std::size_t k = 0; k < 3; ++k) masked[k] = agree[k] == top ? iou_scores[k] : -1.0f;
    return choose_mask(masked);
}

}  // namespace planesam
