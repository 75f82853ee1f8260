#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "planesam/tensor.hpp"

// Minimal tape-free reverse-mode autodiff. Each op returns a Node that keeps
// its parents and a backward closure; backward() walks the graph in reverse
// topological order. Graph construction is skipped under NoGradGuard or when
// no input requires a gradient.
namespace planesam::ag {

struct Node;
using Var = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node&)>;

struct Node {
    Tensor value;
    Tensor grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<Var> parents;
    BackwardFn backward_fn;

    // Gradient buffer, allocated as zeros on first use.
    Tensor& grad_buffer();
    bool has_grad() const noexcept { return !grad.empty(); }
    const std::vector<int>& shape() const noexcept { return value.shape(); }
};

Var constant(Tensor value);
Var parameter(Tensor value);

// Builds a result node; parents/backward are dropped when gradients are off.
Var make_node(Tensor value, std::vector<Var> parents, BackwardFn backward);

// Seeds d(root)/d(root) = 1 (root must be a scalar) and propagates.
void backward(const Var& root);

bool grad_enabled() noexcept;

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// ---- ops -------------------------------------------------------------------

Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, float s);
// Adds a [C] vector to every row of a [N, C] matrix.
Var add_row_vector(const Var& x, const Var& row);

// x [N, in] * W^T [in, out] + b [out]; b may be null.
Var linear(const Var& x, const Var& weight, const Var& bias);
// op(a) * op(b) for rank-2 operands.
Var matmul(const Var& a, const Var& b, bool transpose_a = false, bool transpose_b = false);

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, float eps = 1e-5f);
Var gelu(const Var& x);
Var relu(const Var& x);
Var sigmoid(const Var& x);

// Multi-head attention on packed rows: q [Nq, C], k/v [Nk, C].
Var attention(const Var& q, const Var& k, const Var& v, int heads);

// x [Cin, H, W], weight [Cout, Cin, k, k], bias [Cout] (nullable).
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
// Kernel-2 stride-2 transposed convolution: x [Cin, H, W], weight [Cin, Cout, 2, 2].
Var conv_transpose2x2(const Var& x, const Var& weight, const Var& bias);
// Bilinear resize of [C, H, W] with half-pixel centers.
Var resize_bilinear(const Var& x, int out_h, int out_w);

Var transpose(const Var& x);  // rank-2
Var reshape(const Var& x, std::vector<int> shape);
Var concat_rows(const std::vector<Var>& parts);  // along dim 0
Var slice_rows(const Var& x, int start, int count);  // along dim 0

Var sum(const Var& x);
Var mean(const Var& x);

}  // namespace planesam::ag
