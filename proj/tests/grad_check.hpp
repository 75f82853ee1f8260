#pragma once

// Central finite-difference gradient checker for autograd graphs. Test-only.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "doctest.h"
#include "planesam/autograd.hpp"

namespace planesam::testing {

inline Tensor random_tensor(std::vector<int> shape, std::mt19937& rng, float stddev = 1.0f) {
    Tensor t(std::move(shape));
    std::normal_distribution<float> dist(0.0f, stddev);
    for (float& v : t.storage()) v = dist(rng);
    return t;
}

// Reduces an output to a scalar with fixed random weights so every output
// element contributes a distinct coefficient.
inline ag::Var weighted_sum(const ag::Var& out, std::uint32_t seed) {
    std::mt19937 rng(seed);
    auto w = ag::constant(random_tensor(out->value.shape(), rng));
    return ag::sum(ag::mul(out, w));
}

// Checks d f / d inputs[i] for every element of every input against central
// differences. `f` must rebuild the graph from the given leaves.
inline void check_gradients(const std::function<ag::Var(const std::vector<ag::Var>&)>& f,
                            std::vector<Tensor> inputs, float h = 1e-2f, float tol = 2e-2f) {
    std::vector<ag::Var> leaves;
    for (auto& t : inputs) leaves.push_back(ag::parameter(t));
    auto loss = f(leaves);
    ag::backward(loss);
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        REQUIRE(leaves[i]->has_grad());
        for (std::size_t e = 0; e < inputs[i].numel(); ++e) {
            auto eval = [&](float delta) {
                std::vector<ag::Var> probe;
                for (std::size_t j = 0; j < inputs.size(); ++j) {
                    Tensor t = inputs[j];
                    if (j == i) t[e] += delta;
                    probe.push_back(ag::constant(std::move(t)));
                }
                return static_cast<double>(f(probe)->value[0]);
            };
            const double numeric = (eval(h) - eval(-h)) / (2.0 * h);
            const double analytic = leaves[i]->grad[e];
            const double scale = std::max({1.0, std::fabs(numeric), std::fabs(analytic)});
            CHECK_MESSAGE(std::fabs(numeric - analytic) <= tol * scale,
                          "input " << i << " element " << e << ": analytic " << analytic
                                   << " numeric " << numeric);
        }
    }
}

}  // namespace planesam::testing
