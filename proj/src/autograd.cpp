#include "planesam/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "planesam/errors.hpp"
#include "planesam/kernels.hpp"

namespace planesam::ag {

using kernels::Trans;

namespace {

thread_local bool g_grad_enabled = true;

void accumulate(Node& target, const float* g) {
    if (!target.requires_grad) return;
    Tensor& buf = target.grad_buffer();
    float* dst = buf.data();
    const std::size_t n = buf.numel();
#pragma omp simd
    for (std::size_t i = 0; i < n; ++i) dst[i] += g[i];
}

bool needs(const Var& v) { return v && v->requires_grad; }

int rows_of(const Tensor& t) { return t.dim(0); }
int cols_of(const Tensor& t) { return static_cast<int>(t.numel() / static_cast<std::size_t>(t.dim(0))); }

void require_rank(const Var& v, int rank, const char* what) {
    if (v->value.rank() != rank) {
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                         v->value.shape_string());
    }
}

}  // namespace

Tensor& Node::grad_buffer() {
    if (grad.empty() && !value.empty()) grad = Tensor::zeros_like(value);
    return grad;
}

Var constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return n;
}

Var parameter(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    return n;
}

Var make_node(Tensor value, std::vector<Var> parents, BackwardFn backward) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    if (g_grad_enabled &&
        std::any_of(parents.begin(), parents.end(), [](const Var& p) { return needs(p); })) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward);
    }
    return n;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Var& root) {
    if (root->value.numel() != 1) throw ShapeError("backward: root must be a scalar");
    if (!root->requires_grad) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p && p->requires_grad && !p->parents.empty() && visited.insert(p).second) {
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->grad_buffer()[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
    }
    // Intermediate gradients are no longer needed once propagated.
    for (Node* n : order) {
        if (!n->parents.empty()) n->grad = Tensor();
    }
}

// ---- elementwise ----------------------------------------------------------

Var add(const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value)) {
        throw ShapeError("add: " + a->value.shape_string() + " vs " + b->value.shape_string());
    }
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
    return make_node(std::move(out), {a, b}, [](Node& self) {
        accumulate(*self.parents[0], self.grad.data());
        accumulate(*self.parents[1], self.grad.data());
    });
}

Var mul(const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value)) {
        throw ShapeError("mul: " + a->value.shape_string() + " vs " + b->value.shape_string());
    }
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
    return make_node(std::move(out), {a, b}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const std::size_t n = self.grad.numel();
        if (pa.requires_grad) {
            Tensor g(self.grad.shape());
            for (std::size_t i = 0; i < n; ++i) g[i] = self.grad[i] * pb.value[i];
            accumulate(pa, g.data());
        }
        if (pb.requires_grad) {
            Tensor g(self.grad.shape());
            for (std::size_t i = 0; i < n; ++i) g[i] = self.grad[i] * pa.value[i];
            accumulate(pb, g.data());
        }
    });
}

Var scale(const Var& a, float s) {
    Tensor out = a->value;
    for (float& v : out.storage()) v *= s;
    return make_node(std::move(out), {a}, [s](Node& self) {
        Tensor g = self.grad;
        for (float& v : g.storage()) v *= s;
        accumulate(*self.parents[0], g.data());
    });
}

Var add_row_vector(const Var& x, const Var& row) {
    require_rank(x, 2, "add_row_vector");
    const int N = x->value.dim(0);
    const int C = x->value.dim(1);
    if (row->value.numel() != static_cast<std::size_t>(C)) throw ShapeError("add_row_vector: width mismatch");
    Tensor out = x->value;
    for (int i = 0; i < N; ++i)
        for (int c = 0; c < C; ++c) out[static_cast<std::size_t>(i) * C + c] += row->value[static_cast<std::size_t>(c)];
    return make_node(std::move(out), {x, row}, [N, C](Node& self) {
        accumulate(*self.parents[0], self.grad.data());
        if (self.parents[1]->requires_grad) {
            std::vector<float> g(static_cast<std::size_t>(C), 0.0f);
            for (int i = 0; i < N; ++i)
                for (int c = 0; c < C; ++c) g[static_cast<std::size_t>(c)] += self.grad[static_cast<std::size_t>(i) * C + c];
            accumulate(*self.parents[1], g.data());
        }
    });
}

// ---- dense ----------------------------------------------------------------

Var linear(const Var& x, const Var& weight, const Var& bias) {
    require_rank(x, 2, "linear input");
    require_rank(weight, 2, "linear weight");
    const int N = x->value.dim(0);
    const int in = x->value.dim(1);
    const int out = weight->value.dim(0);
    if (weight->value.dim(1) != in) {
        throw ShapeError("linear: input " + x->value.shape_string() + " vs weight " +
                         weight->value.shape_string());
    }
    Tensor y({N, out});
    kernels::gemm(Trans::No, Trans::Yes, N, out, in, x->value.data(), weight->value.data(), y.data(), false);
    if (bias) {
        if (bias->value.numel() != static_cast<std::size_t>(out)) throw ShapeError("linear: bias size");
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < out; ++j) y[static_cast<std::size_t>(i) * out + j] += bias->value[static_cast<std::size_t>(j)];
    }
    std::vector<Var> parents{x, weight};
    if (bias) parents.push_back(bias);
    return make_node(std::move(y), std::move(parents), [N, in, out](Node& self) {
        Node& px = *self.parents[0];
        Node& pw = *self.parents[1];
        if (px.requires_grad) {
            kernels::gemm(Trans::No, Trans::No, N, in, out, self.grad.data(), pw.value.data(),
                          px.grad_buffer().data(), true);
        }
        if (pw.requires_grad) {
            kernels::gemm(Trans::Yes, Trans::No, out, in, N, self.grad.data(), px.value.data(),
                          pw.grad_buffer().data(), true);
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
            float* db = self.parents[2]->grad_buffer().data();
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < out; ++j) db[j] += self.grad[static_cast<std::size_t>(i) * out + j];
        }
    });
}

Var matmul(const Var& a, const Var& b, bool transpose_a, bool transpose_b) {
    require_rank(a, 2, "matmul lhs");
    require_rank(b, 2, "matmul rhs");
    const Trans ta = transpose_a ? Trans::Yes : Trans::No;
    const Trans tb = transpose_b ? Trans::Yes : Trans::No;
    const int M = transpose_a ? a->value.dim(1) : a->value.dim(0);
    const int K = transpose_a ? a->value.dim(0) : a->value.dim(1);
    const int Kb = transpose_b ? b->value.dim(1) : b->value.dim(0);
    const int N = transpose_b ? b->value.dim(0) : b->value.dim(1);
    if (K != Kb) throw ShapeError("matmul: inner dimensions differ");
    Tensor c({M, N});
    kernels::gemm(ta, tb, M, N, K, a->value.data(), b->value.data(), c.data(), false);
    return make_node(std::move(c), {a, b}, [=](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const Trans not_ta = transpose_a ? Trans::No : Trans::Yes;
        const Trans not_tb = transpose_b ? Trans::No : Trans::Yes;
        if (pa.requires_grad) {
            if (!transpose_a) {
                kernels::gemm(Trans::No, not_tb, M, K, N, self.grad.data(), pb.value.data(),
                              pa.grad_buffer().data(), true);
            } else {
                kernels::gemm(tb, Trans::Yes, K, M, N, pb.value.data(), self.grad.data(),
                              pa.grad_buffer().data(), true);
            }
        }
        if (pb.requires_grad) {
            if (!transpose_b) {
                kernels::gemm(not_ta, Trans::No, K, N, M, pa.value.data(), self.grad.data(),
                              pb.grad_buffer().data(), true);
            } else {
                kernels::gemm(Trans::Yes, ta, N, K, M, self.grad.data(), pa.value.data(),
                              pb.grad_buffer().data(), true);
            }
        }
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, float eps) {
    require_rank(x, 2, "layer_norm");
    const int R = x->value.dim(0);
    const int C = x->value.dim(1);
    if (gamma->value.numel() != static_cast<std::size_t>(C) || beta->value.numel() != static_cast<std::size_t>(C)) {
        throw ShapeError("layer_norm: affine size mismatch");
    }
    Tensor y({R, C});
    std::vector<float> mean(static_cast<std::size_t>(R));
    std::vector<float> rstd(static_cast<std::size_t>(R));
    kernels::layer_norm_forward(x->value.data(), gamma->value.data(), beta->value.data(), R, C, eps,
                                y.data(), mean.data(), rstd.data());
    return make_node(std::move(y), {x, gamma, beta},
                     [R, C, mean = std::move(mean), rstd = std::move(rstd)](Node& self) {
                         Node& px = *self.parents[0];
                         Node& pg = *self.parents[1];
                         Node& pb = *self.parents[2];
                         Tensor dx({R, C});
                         kernels::layer_norm_backward(
                             px.value.data(), pg.value.data(), mean.data(), rstd.data(),
                             self.grad.data(), R, C, dx.data(),
                             pg.requires_grad ? pg.grad_buffer().data() : nullptr,
                             pb.requires_grad ? pb.grad_buffer().data() : nullptr);
                         accumulate(px, dx.data());
                     });
}

namespace {
constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2/pi)
constexpr float kGeluA = 0.044715f;
}  // namespace

Var gelu(const Var& x) {
    Tensor y = x->value;
    for (float& v : y.storage()) {
        const float t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        v = 0.5f * v * (1.0f + t);
    }
    return make_node(std::move(y), {x}, [](Node& self) {
        Node& px = *self.parents[0];
        Tensor g(self.grad.shape());
        for (std::size_t i = 0; i < g.numel(); ++i) {
            const float v = px.value[i];
            const float t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
            const float dt = (1.0f - t * t) * kGeluC * (1.0f + 3.0f * kGeluA * v * v);
            g[i] = self.grad[i] * (0.5f * (1.0f + t) + 0.5f * v * dt);
        }
        accumulate(px, g.data());
    });
}

Var relu(const Var& x) {
    Tensor y = x->value;
    for (float& v : y.storage()) v = v > 0.0f ? v : 0.0f;
    return make_node(std::move(y), {x}, [](Node& self) {
        Node& px = *self.parents[0];
        Tensor g(self.grad.shape());
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] = px.value[i] > 0.0f ? self.grad[i] : 0.0f;
        accumulate(px, g.data());
    });
}

Var sigmoid(const Var& x) {
    Tensor y = x->value;
    for (float& v : y.storage()) v = 1.0f / (1.0f + std::exp(-v));
    return make_node(y, {x}, [y](Node& self) {
        Tensor g(self.grad.shape());
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] * y[i] * (1.0f - y[i]);
        accumulate(*self.parents[0], g.data());
    });
}

Var attention(const Var& q, const Var& k, const Var& v, int heads) {
    require_rank(q, 2, "attention q");
    require_rank(k, 2, "attention k");
    require_rank(v, 2, "attention v");
    const int Nq = q->value.dim(0);
    const int C = q->value.dim(1);
    const int Nk = k->value.dim(0);
    if (k->value.dim(1) != C || !v->value.same_shape(k->value)) throw ShapeError("attention: q/k/v widths differ");
    if (heads <= 0 || C % heads != 0) throw ShapeError("attention: width not divisible by heads");
    Tensor out({Nq, C});
    std::vector<float> probs(static_cast<std::size_t>(heads) * Nq * Nk);
    kernels::attention_forward(q->value.data(), k->value.data(), v->value.data(), Nq, Nk, C, heads,
                               out.data(), probs.data());
    return make_node(std::move(out), {q, k, v},
                     [=, probs = std::move(probs)](Node& self) {
                         Node& pq = *self.parents[0];
                         Node& pk = *self.parents[1];
                         Node& pv = *self.parents[2];
                         Tensor dq({Nq, C});
                         Tensor dk({Nk, C});
                         Tensor dv({Nk, C});
                         kernels::attention_backward(pq.value.data(), pk.value.data(), pv.value.data(),
                                                     probs.data(), self.grad.data(), Nq, Nk, C, heads,
                                                     dq.data(), dk.data(), dv.data());
                         accumulate(pq, dq.data());
                         accumulate(pk, dk.data());
                         accumulate(pv, dv.data());
                     });
}

// ---- spatial --------------------------------------------------------------

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
    require_rank(x, 3, "conv2d input");
    require_rank(weight, 4, "conv2d weight");
    const int Cin = x->value.dim(0);
    const int H = x->value.dim(1);
    const int W = x->value.dim(2);
    const int Cout = weight->value.dim(0);
    const int k = weight->value.dim(2);
    if (weight->value.dim(1) != Cin || weight->value.dim(3) != k) {
        throw ShapeError("conv2d: input " + x->value.shape_string() + " vs weight " + weight->value.shape_string());
    }
    const int Ho = kernels::conv_out_size(H, k, stride, pad);
    const int Wo = kernels::conv_out_size(W, k, stride, pad);
    if (Ho <= 0 || Wo <= 0) throw ShapeError("conv2d: empty output");
    const int ck = Cin * k * k;
    const int P = Ho * Wo;
    std::vector<float> col(static_cast<std::size_t>(ck) * P);
    kernels::im2col(x->value.data(), Cin, H, W, k, stride, pad, col.data());
    Tensor y({Cout, Ho, Wo});
    kernels::gemm(Trans::No, Trans::No, Cout, P, ck, weight->value.data(), col.data(), y.data(), false);
    if (bias) {
        for (int c = 0; c < Cout; ++c)
            for (int p = 0; p < P; ++p) y[static_cast<std::size_t>(c) * P + p] += bias->value[static_cast<std::size_t>(c)];
    }
    std::vector<Var> parents{x, weight};
    if (bias) parents.push_back(bias);
    return make_node(std::move(y), std::move(parents),
                     [=, col = std::move(col)](Node& self) {
                         Node& px = *self.parents[0];
                         Node& pw = *self.parents[1];
                         if (pw.requires_grad) {
                             kernels::gemm(Trans::No, Trans::Yes, Cout, ck, P, self.grad.data(), col.data(),
                                           pw.grad_buffer().data(), true);
                         }
                         if (px.requires_grad) {
                             std::vector<float> dcol(static_cast<std::size_t>(ck) * P);
                             kernels::gemm(Trans::Yes, Trans::No, ck, P, Cout, pw.value.data(),
                                           self.grad.data(), dcol.data(), false);
                             kernels::col2im_add(dcol.data(), Cin, H, W, k, stride, pad,
                                                 px.grad_buffer().data());
                         }
                         if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
                             float* db = self.parents[2]->grad_buffer().data();
                             for (int c = 0; c < Cout; ++c)
                                 for (int p = 0; p < P; ++p) db[c] += self.grad[static_cast<std::size_t>(c) * P + p];
                         }
                     });
}

Var conv_transpose2x2(const Var& x, const Var& weight, const Var& bias) {
    require_rank(x, 3, "conv_transpose2x2 input");
    require_rank(weight, 4, "conv_transpose2x2 weight");
    const int Cin = x->value.dim(0);
    const int H = x->value.dim(1);
    const int W = x->value.dim(2);
    const int Cout = weight->value.dim(1);
    if (weight->value.dim(0) != Cin || weight->value.dim(2) != 2 || weight->value.dim(3) != 2) {
        throw ShapeError("conv_transpose2x2: weight must be [Cin, Cout, 2, 2]");
    }
    const int P = H * W;
    const int Q = Cout * 4;
    // Ymat [Q, P] = Wmat^T [Q, Cin] * X [Cin, P]
    std::vector<float> ymat(static_cast<std::size_t>(Q) * P);
    kernels::gemm(Trans::Yes, Trans::No, Q, P, Cin, weight->value.data(), x->value.data(), ymat.data(), false);
    const int Ho = 2 * H;
    const int Wo = 2 * W;
    Tensor y({Cout, Ho, Wo});
    for (int co = 0; co < Cout; ++co) {
        const float b = bias ? bias->value[static_cast<std::size_t>(co)] : 0.0f;
        for (int a = 0; a < 2; ++a)
            for (int c = 0; c < 2; ++c) {
                const float* src = ymat.data() + static_cast<std::size_t>(co * 4 + a * 2 + c) * P;
                for (int i = 0; i < H; ++i)
                    for (int j = 0; j < W; ++j)
                        y[(static_cast<std::size_t>(co) * Ho + 2 * i + a) * Wo + 2 * j + c] = src[i * W + j] + b;
            }
    }
    std::vector<Var> parents{x, weight};
    if (bias) parents.push_back(bias);
    return make_node(std::move(y), std::move(parents), [=](Node& self) {
        Node& px = *self.parents[0];
        Node& pw = *self.parents[1];
        std::vector<float> dy(static_cast<std::size_t>(Q) * P);
        for (int co = 0; co < Cout; ++co)
            for (int a = 0; a < 2; ++a)
                for (int c = 0; c < 2; ++c) {
                    float* dst = dy.data() + static_cast<std::size_t>(co * 4 + a * 2 + c) * P;
                    for (int i = 0; i < H; ++i)
                        for (int j = 0; j < W; ++j)
                            dst[i * W + j] = self.grad[(static_cast<std::size_t>(co) * Ho + 2 * i + a) * Wo + 2 * j + c];
                }
        if (pw.requires_grad) {
            kernels::gemm(Trans::No, Trans::Yes, Cin, Q, P, px.value.data(), dy.data(), pw.grad_buffer().data(), true);
        }
        if (px.requires_grad) {
            kernels::gemm(Trans::No, Trans::No, Cin, P, Q, pw.value.data(), dy.data(), px.grad_buffer().data(), true);
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
            float* db = self.parents[2]->grad_buffer().data();
            for (int co = 0; co < Cout; ++co)
                for (int t = 0; t < 4 * P; ++t) db[co] += dy[static_cast<std::size_t>(co) * 4 * P + t];
        }
    });
}

namespace {

struct Tap {
    int i0, i1;
    float w0, w1;
};

std::vector<Tap> bilinear_taps(int in, int out) {
    std::vector<Tap> taps(static_cast<std::size_t>(out));
    const float ratio = static_cast<float>(in) / static_cast<float>(out);
    for (int o = 0; o < out; ++o) {
        float src = (static_cast<float>(o) + 0.5f) * ratio - 0.5f;
        if (src < 0.0f) src = 0.0f;
        int i0 = static_cast<int>(std::floor(src));
        if (i0 > in - 1) i0 = in - 1;
        const int i1 = std::min(i0 + 1, in - 1);
        const float w1 = src - static_cast<float>(i0);
        taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0f - w1, w1};
    }
    return taps;
}

}  // namespace

Var resize_bilinear(const Var& x, int out_h, int out_w) {
    require_rank(x, 3, "resize_bilinear");
    const int C = x->value.dim(0);
    const int H = x->value.dim(1);
    const int W = x->value.dim(2);
    if (out_h <= 0 || out_w <= 0) throw ShapeError("resize_bilinear: empty output");
    if (H == out_h && W == out_w) return x;
    auto ty = bilinear_taps(H, out_h);
    auto tx = bilinear_taps(W, out_w);
    Tensor y({C, out_h, out_w});
    for (int c = 0; c < C; ++c) {
        const float* src = x->value.data() + static_cast<std::size_t>(c) * H * W;
        float* dst = y.data() + static_cast<std::size_t>(c) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
            const Tap& a = ty[static_cast<std::size_t>(oy)];
            for (int ox = 0; ox < out_w; ++ox) {
                const Tap& b = tx[static_cast<std::size_t>(ox)];
                dst[oy * out_w + ox] = a.w0 * (b.w0 * src[a.i0 * W + b.i0] + b.w1 * src[a.i0 * W + b.i1]) +
                                       a.w1 * (b.w0 * src[a.i1 * W + b.i0] + b.w1 * src[a.i1 * W + b.i1]);
            }
        }
    }
    return make_node(std::move(y), {x}, [=, ty = std::move(ty), tx = std::move(tx)](Node& self) {
        Node& px = *self.parents[0];
        float* gx = px.grad_buffer().data();
        for (int c = 0; c < C; ++c) {
            float* dst = gx + static_cast<std::size_t>(c) * H * W;
            const float* g = self.grad.data() + static_cast<std::size_t>(c) * out_h * out_w;
            for (int oy = 0; oy < out_h; ++oy) {
                const Tap& a = ty[static_cast<std::size_t>(oy)];
                for (int ox = 0; ox < out_w; ++ox) {
                    const Tap& b = tx[static_cast<std::size_t>(ox)];
                    const float v = g[oy * out_w + ox];
                    dst[a.i0 * W + b.i0] += v * a.w0 * b.w0;
                    dst[a.i0 * W + b.i1] += v * a.w0 * b.w1;
                    dst[a.i1 * W + b.i0] += v * a.w1 * b.w0;
                    dst[a.i1 * W + b.i1] += v * a.w1 * b.w1;
                }
            }
        }
    });
}

// ---- layout ---------------------------------------------------------------

Var transpose(const Var& x) {
    require_rank(x, 2, "transpose");
    const int R = x->value.dim(0);
    const int C = x->value.dim(1);
    Tensor y({C, R});
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) y[static_cast<std::size_t>(c) * R + r] = x->value[static_cast<std::size_t>(r) * C + c];
    return make_node(std::move(y), {x}, [R, C](Node& self) {
        Tensor g({R, C});
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < C; ++c) g[static_cast<std::size_t>(r) * C + c] = self.grad[static_cast<std::size_t>(c) * R + r];
        accumulate(*self.parents[0], g.data());
    });
}

Var reshape(const Var& x, std::vector<int> shape) {
    Tensor y = x->value.reshaped(std::move(shape));
    return make_node(std::move(y), {x}, [](Node& self) { accumulate(*self.parents[0], self.grad.data()); });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const int width = cols_of(parts[0]->value);
    std::vector<int> shape = parts[0]->value.shape();
    int rows = 0;
    for (const auto& p : parts) {
        std::vector<int> tail(p->value.shape().begin() + 1, p->value.shape().end());
        std::vector<int> tail0(shape.begin() + 1, shape.end());
        if (tail != tail0) throw ShapeError("concat_rows: trailing shapes differ");
        rows += rows_of(p->value);
    }
    shape[0] = rows;
    Tensor y(shape);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        std::copy(p->value.storage().begin(), p->value.storage().end(), y.storage().begin() + static_cast<long>(offset));
        offset += p->value.numel();
    }
    (void)width;
    return make_node(std::move(y), parts, [](Node& self) {
        std::size_t off = 0;
        for (auto& p : self.parents) {
            if (p->requires_grad) accumulate(*p, self.grad.data() + off);
            off += p->value.numel();
        }
    });
}

Var slice_rows(const Var& x, int start, int count) {
    const int R = rows_of(x->value);
    if (start < 0 || count < 0 || start + count > R) throw ShapeError("slice_rows: range out of bounds");
    const std::size_t width = static_cast<std::size_t>(cols_of(x->value));
    std::vector<int> shape = x->value.shape();
    shape[0] = count;
    Tensor y(shape);
    std::copy_n(x->value.data() + static_cast<std::size_t>(start) * width, static_cast<std::size_t>(count) * width, y.data());
    return make_node(std::move(y), {x}, [start, width](Node& self) {
        Node& px = *self.parents[0];
        float* dst = px.grad_buffer().data() + static_cast<std::size_t>(start) * width;
        for (std::size_t i = 0; i < self.grad.numel(); ++i) dst[i] += self.grad[i];
    });
}

Var sum(const Var& x) {
    double s = 0.0;
    for (float v : x->value.storage()) s += v;
    return make_node(Tensor({1}, static_cast<float>(s)), {x}, [](Node& self) {
        Node& px = *self.parents[0];
        Tensor g(px.value.shape(), self.grad[0]);
        accumulate(px, g.data());
    });
}

Var mean(const Var& x) { return scale(sum(x), 1.0f / static_cast<float>(x->value.numel())); }

}  // namespace planesam::ag
