#include "planesam/nn.hpp"

#include <cmath>

#include "planesam/errors.hpp"

namespace planesam::nn {

ag::Var ParameterStore::create(const std::string& name, Tensor init) {
    if (find(name)) throw ConfigError("duplicate parameter name " + name);
    auto v = ag::parameter(std::move(init));
    params_.push_back({name, v});
    return v;
}

ag::Var ParameterStore::create_buffer(const std::string& name, Tensor value) {
    if (find(name)) throw ConfigError("duplicate parameter name " + name);
    auto v = ag::constant(std::move(value));
    params_.push_back({name, v, true});
    return v;
}

ag::Var ParameterStore::find(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return p.var;
    return nullptr;
}

std::size_t ParameterStore::total_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.var->value.numel();
    return n;
}

std::size_t ParameterStore::count_with_prefix(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& p : params_)
        if (p.name.rfind(prefix, 0) == 0) n += p.var->value.numel();
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& p : params_) p.var->grad = Tensor();
}

Tensor normal_init(std::vector<int> shape, float stddev, Rng& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<float> dist(0.0f, stddev);
    for (float& v : t.storage()) v = dist(rng);
    return t;
}

Tensor fan_in_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
    std::uniform_real_distribution<float> dist(-bound, bound);
    for (float& v : t.storage()) v = dist(rng);
    return t;
}

Linear::Linear(ParameterStore& store, const std::string& name, int in, int out, Rng& rng, bool zero_init) {
    weight = store.create(name + ".weight", zero_init ? Tensor({out, in}) : fan_in_uniform({out, in}, in, rng));
    bias = store.create(name + ".bias", Tensor({out}));
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, int width) {
    gamma = store.create(name + ".weight", Tensor({width}, 1.0f));
    beta = store.create(name + ".bias", Tensor({width}));
}

Conv2d::Conv2d(ParameterStore& store, const std::string& name, int in, int out, int kernel, int stride_,
               int pad_, Rng& rng)
    : stride(stride_), pad(pad_) {
    weight = store.create(name + ".weight", fan_in_uniform({out, in, kernel, kernel}, in * kernel * kernel, rng));
    bias = store.create(name + ".bias", Tensor({out}));
}

ConvTranspose2x2::ConvTranspose2x2(ParameterStore& store, const std::string& name, int in, int out, Rng& rng) {
    weight = store.create(name + ".weight", fan_in_uniform({in, out, 2, 2}, in, rng));
    bias = store.create(name + ".bias", Tensor({out}));
}

Mlp::Mlp(ParameterStore& store, const std::string& name, const std::vector<int>& widths, Rng& rng,
         bool zero_init_last) {
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        const bool last = i + 2 == widths.size();
        layers.emplace_back(store, name + "." + std::to_string(i), widths[i], widths[i + 1], rng,
                            last && zero_init_last);
    }
}

ag::Var Mlp::operator()(const ag::Var& x) const {
    ag::Var h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        h = layers[i](h);
        if (i + 1 < layers.size()) h = ag::relu(h);
    }
    return h;
}

ag::Var tokens_to_grid(const ag::Var& tokens, int height, int width) {
    const int C = tokens->value.dim(1);
    return ag::reshape(ag::transpose(tokens), {C, height, width});
}

ag::Var grid_to_tokens(const ag::Var& grid) {
    const int C = grid->value.dim(0);
    const int P = static_cast<int>(grid->value.numel() / static_cast<std::size_t>(C));
    return ag::transpose(ag::reshape(grid, {C, P}));
}

}  // namespace planesam::nn
