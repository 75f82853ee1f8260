#include <cmath>
#include <random>

#include "doctest.h"
#include "grad_check.hpp"
#include "planesam/backbone.hpp"
#include "planesam/errors.hpp"

using namespace planesam;
using planesam::testing::random_tensor;

namespace {

BackboneConfig small_config() {
    BackboneConfig cfg;
    cfg.image_size = 32;
    cfg.patch_size = 8;
    cfg.embed_dim = 32;
    cfg.blocks = 2;
    cfg.heads = 2;
    cfg.cnn_channels = 8;
    return cfg;
}

Tensor uniform_image(int channels, int size, std::mt19937& rng) {
    Tensor t({channels, size, size});
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (float& v : t.storage()) v = u(rng);
    return t;
}

}  // namespace

TEST_CASE("patch embedding produces one token per patch") {
    BackboneConfig cfg = small_config();
    cfg.image_size = 64;
    cfg.patch_size = 8;
    cfg.embed_dim = 96;
    cfg.heads = 3;
    nn::ParameterStore store;
    Rng rng(1);
    DualBackbone bb(store, cfg, rng);
    std::mt19937 g(2);
    auto tokens = bb.patch_embed(ag::constant(uniform_image(3, 64, g)));
    CHECK(tokens->shape() == std::vector<int>{64, 96});

    CHECK_THROWS_AS(bb.patch_embed(ag::constant(uniform_image(3, 32, g))), ShapeError);
}

TEST_CASE("zero image through a zeroed projection yields the positional term") {
    nn::ParameterStore store;
    Rng rng(3);
    DualBackbone bb(store, small_config(), rng);
    store.find("transformer.patch_embed.weight")->value.fill(0.0f);
    auto tokens = bb.patch_embed(ag::constant(Tensor({3, 32, 32})));
    CHECK(max_abs_diff(tokens->value, store.find("transformer.pos_embed")->value) == 0.0f);
}

TEST_CASE("different images give different embeddings") {
    nn::ParameterStore store;
    Rng rng(4);
    DualBackbone bb(store, small_config(), rng);
    std::mt19937 g(5);
    auto a = bb.patch_embed(ag::constant(uniform_image(3, 32, g)));
    auto b = bb.patch_embed(ag::constant(uniform_image(3, 32, g)));
    CHECK(max_abs_diff(a->value, b->value) > 1e-3f);
}

TEST_CASE("fusion block is an exact identity on tokens at init") {
    nn::ParameterStore store;
    Rng rng(6);
    DualBackbone bb(store, small_config(), rng);
    std::mt19937 g(7);
    auto tokens = ag::constant(random_tensor({16, 32}, g));
    auto state = ag::constant(random_tensor({8, 4, 4}, g));
    auto out = bb.lwcnn_block_forward(tokens, state, 1);
    CHECK(max_abs_diff(out.tokens->value, tokens->value) == 0.0f);
    CHECK(out.depth_state->shape() == std::vector<int>{8, 4, 4});

    auto zero_depth = bb.lwcnn_block_forward(tokens, ag::constant(Tensor({8, 4, 4})), 0);
    CHECK(zero_depth.tokens->value.all_finite());
    CHECK(zero_depth.depth_state->value.all_finite());

    CHECK_THROWS_AS(bb.lwcnn_block_forward(tokens, ag::constant(Tensor({8, 5, 5})), 0), ShapeError);
    CHECK_THROWS_AS(bb.lwcnn_block_forward(tokens, state, 2), ShapeError);
}

TEST_CASE("encoder block keeps shape and is permutation equivariant") {
    nn::ParameterStore store;
    Rng rng(8);
    DualBackbone bb(store, small_config(), rng);
    std::mt19937 g(9);
    Tensor x = random_tensor({16, 32}, g);
    auto y = bb.encoder_block_forward(ag::constant(x), 0);
    REQUIRE(y->shape() == x.shape());

    const int i = 3, j = 11;
    Tensor xp = x;
    for (int c = 0; c < 32; ++c) std::swap(xp[i * 32 + c], xp[j * 32 + c]);
    auto yp = bb.encoder_block_forward(ag::constant(xp), 0);
    Tensor back = yp->value;
    for (int c = 0; c < 32; ++c) std::swap(back[i * 32 + c], back[j * 32 + c]);
    CHECK(max_abs_diff(back, y->value) < 1e-5f);
}

TEST_CASE("dual encoder matches the rgb-only encoder at init") {
    BackboneConfig cfg = small_config();
    nn::ParameterStore store;
    Rng rng(10);
    DualBackbone bb(store, cfg, rng);
    std::mt19937 g(11);
    for (int trial = 0; trial < 3; ++trial) {
        auto rgb = ag::constant(uniform_image(3, 32, g));
        auto depth = ag::constant(uniform_image(1, 32, g));
        auto dual = bb.forward(rgb, depth, true);
        auto plain = bb.forward(rgb, depth, false);
        CHECK(dual.features->shape() == std::vector<int>{16, 32});
        CHECK(dual.grid == 4);
        CHECK(max_abs_diff(dual.features->value, plain.features->value) < 1e-5f);
    }
}

TEST_CASE("one gradient step makes the output depend on depth") {
    BackboneConfig cfg = small_config();
    nn::ParameterStore store;
    Rng rng(12);
    DualBackbone bb(store, cfg, rng);
    std::mt19937 g(13);
    auto rgb = ag::constant(uniform_image(3, 32, g));
    auto depth_a = ag::constant(uniform_image(1, 32, g));
    auto depth_b = ag::constant(uniform_image(1, 32, g));

    {
        ag::NoGradGuard no_grad;
        CHECK(max_abs_diff(bb.forward(rgb, depth_a).features->value, bb.forward(rgb, depth_b).features->value) ==
              0.0f);
    }

    // Loss that only a depth-aware encoder can lower: match a depth-derived target.
    Tensor target({16, 32});
    for (std::size_t k = 0; k < target.numel(); ++k) target[k] = depth_a->value[k % 1024];
    auto diff = ag::add(bb.forward(rgb, depth_a).features, ag::constant([&] {
                            Tensor t = target;
                            for (float& v : t.storage()) v = -v;
                            return t;
                        }()));
    ag::backward(ag::mean(ag::mul(diff, diff)));
    for (const auto& p : store.parameters()) {
        if (!p.var->has_grad()) continue;
        for (std::size_t k = 0; k < p.var->value.numel(); ++k) p.var->value[k] -= 0.1f * p.var->grad[k];
    }
    store.zero_grad();

    ag::NoGradGuard no_grad;
    auto a = bb.forward(rgb, depth_a).features;
    auto b = bb.forward(rgb, depth_b).features;
    CHECK(a->value.all_finite());
    CHECK(max_abs_diff(a->value, b->value) > 1e-6f);
}

TEST_CASE("transformer parameters receive gradient on a nontrivial loss") {
    nn::ParameterStore store;
    Rng rng(14);
    DualBackbone bb(store, small_config(), rng);
    std::mt19937 g(15);
    auto out = bb.forward(ag::constant(uniform_image(3, 32, g)), ag::constant(uniform_image(1, 32, g)));
    ag::backward(planesam::testing::weighted_sum(out.features, 16));
    bool any_nonzero = false;
    for (const auto& p : store.parameters()) {
        if (p.name.rfind("transformer.", 0) != 0 || !p.var->has_grad()) continue;
        for (float v : p.var->grad.storage()) any_nonzero = any_nonzero || v != 0.0f;
    }
    CHECK(any_nonzero);
}

TEST_CASE("non-finite input is reported with the failing stage") {
    nn::ParameterStore store;
    Rng rng(17);
    DualBackbone bb(store, small_config(), rng);
    Tensor rgb({3, 32, 32}, 0.5f);
    rgb[100] = std::nanf("");
    try {
        bb.forward(ag::constant(rgb), ag::constant(Tensor({1, 32, 32})));
        FAIL("expected NumericFault");
    } catch (const NumericFault& e) {
        CHECK(std::string(e.what()).find("stage 0") != std::string::npos);
    }
}

TEST_CASE("default config keeps the depth branch small") {
    BackboneConfig cfg;  // 256 / 16 / 192 / 12 blocks / 32 cnn channels
    nn::ParameterStore store;
    Rng rng(18);
    DualBackbone bb(store, cfg, rng);
    auto part = parameter_partition(store);
    CHECK(part.total() == store.total_count());
    CHECK(part.other == 0);
    CHECK(static_cast<double>(part.cnn) / static_cast<double>(part.transformer) < 0.15);

    // Hand count of one fusion block and one encoder block.
    const std::size_t C = 192, cc = 32, hidden = 768;
    const std::size_t fusion = (C * cc + cc) + (2 * cc * cc * 9 + cc) + (cc * cc * 9 + cc) + (cc * C + C);
    const std::size_t encoder = 4 * (C * C + C) + (C * hidden + hidden) + (hidden * C + C) + 4 * C;
    CHECK(store.count_with_prefix("cnn.blocks.0.") == fusion);
    CHECK(store.count_with_prefix("transformer.blocks.0.") == encoder);
    CHECK(static_cast<double>(fusion) / static_cast<double>(encoder) < 0.1);
}

TEST_CASE("halving cnn channels shrinks the depth branch") {
    BackboneConfig cfg = small_config();
    nn::ParameterStore full, half;
    Rng r1(19), r2(19);
    DualBackbone a(full, cfg, r1);
    cfg.cnn_channels /= 2;
    DualBackbone b(half, cfg, r2);
    CHECK(parameter_partition(half).cnn < parameter_partition(full).cnn);
    CHECK(parameter_partition(half).transformer == parameter_partition(full).transformer);
}

TEST_CASE("backbone config validation") {
    BackboneConfig cfg = small_config();
    cfg.patch_size = 7;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config();
    cfg.heads = 5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config();
    cfg.blocks = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
