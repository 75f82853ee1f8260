#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "planesam/autograd.hpp"
#include "planesam/data.hpp"

namespace planesam::nn {

struct NamedParameter {
    std::string name;
    ag::Var var;
    bool buffer = false;  // fixed tensor: checkpointed, never optimised
};

// Owns every trainable tensor of a model under a dotted, hierarchical name
// (`transformer.blocks.3.attn.q.weight`). Registration order is stable and is
// the order used by checkpoints and optimizers.
class ParameterStore {
public:
    ag::Var create(const std::string& name, Tensor init);
    ag::Var create_buffer(const std::string& name, Tensor value);

    const std::vector<NamedParameter>& parameters() const noexcept { return params_; }
    ag::Var find(const std::string& name) const;  // null when absent

    std::size_t total_count() const;
    std::size_t count_with_prefix(const std::string& prefix) const;
    void zero_grad();

private:
    std::vector<NamedParameter> params_;
};

// ---- initialisers -----------------------------------------------------------

Tensor normal_init(std::vector<int> shape, float stddev, Rng& rng);
// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor fan_in_uniform(std::vector<int> shape, int fan_in, Rng& rng);

// ---- layers ---------------------------------------------------------------

struct Linear {
    ag::Var weight;  // [out, in]
    ag::Var bias;    // [out]

    Linear() = default;
    Linear(ParameterStore& store, const std::string& name, int in, int out, Rng& rng, bool zero_init = false);
    ag::Var operator()(const ag::Var& x) const { return ag::linear(x, weight, bias); }
};

struct LayerNorm {
    ag::Var gamma;
    ag::Var beta;

    LayerNorm() = default;
    LayerNorm(ParameterStore& store, const std::string& name, int width);
    ag::Var operator()(const ag::Var& x) const { return ag::layer_norm(x, gamma, beta, 1e-6f); }
};

struct Conv2d {
    ag::Var weight;  // [out, in, k, k]
    ag::Var bias;
    int stride = 1;
    int pad = 0;

    Conv2d() = default;
    Conv2d(ParameterStore& store, const std::string& name, int in, int out, int kernel, int stride, int pad,
           Rng& rng);
    ag::Var operator()(const ag::Var& x) const { return ag::conv2d(x, weight, bias, stride, pad); }
};

struct ConvTranspose2x2 {
    ag::Var weight;  // [in, out, 2, 2]
    ag::Var bias;

    ConvTranspose2x2() = default;
    ConvTranspose2x2(ParameterStore& store, const std::string& name, int in, int out, Rng& rng);
    ag::Var operator()(const ag::Var& x) const { return ag::conv_transpose2x2(x, weight, bias); }
};

// Linear -> act -> ... -> Linear with ReLU between layers.
struct Mlp {
    std::vector<Linear> layers;

    Mlp() = default;
    Mlp(ParameterStore& store, const std::string& name, const std::vector<int>& widths, Rng& rng,
        bool zero_init_last = false);
    ag::Var operator()(const ag::Var& x) const;
};

// [N, C] token rows <-> [C, H, W] channel-major grid.
ag::Var tokens_to_grid(const ag::Var& tokens, int height, int width);
ag::Var grid_to_tokens(const ag::Var& grid);

}  // namespace planesam::nn
