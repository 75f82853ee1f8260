#pragma once

#include <cstdint>
#include <span>
#include <vector>

// Numeric kernels behind the autograd ops and the partition metrics.
//
// Two implementations of every kernel live here:
//   planesam::kernels             OpenMP-parallel, register-blocked, used by the library
//   planesam::kernels::reference  plain serial loops, kept as the test oracle
//
// Parallel kernels only split work across independent outputs, so results do
// not depend on the thread count.
namespace planesam::kernels {

enum class Trans : bool { No = false, Yes = true };

// C[M,N] (+)= op(A) * op(B). op(A) is M x K: A is stored M x K (Trans::No)
// or K x M (Trans::Yes). op(B) is K x N: B is stored K x N or N x K.
void gemm(Trans ta, Trans tb, int M, int N, int K, const float* A, const float* B, float* C,
          bool accumulate);

// Column matrix for a square-kernel convolution of a C x H x W image.
// Output is (C*k*k) x (Ho*Wo).
void im2col(const float* x, int C, int H, int W, int k, int stride, int pad, float* col);
// Adjoint of im2col: scatters-adds columns back into a C x H x W image.
void col2im_add(const float* col, int C, int H, int W, int k, int stride, int pad, float* x);

int conv_out_size(int in, int k, int stride, int pad);

// Row-wise layer norm over `cols` features. mean/rstd hold `rows` entries.
void layer_norm_forward(const float* x, const float* gamma, const float* beta, int rows, int cols,
                        float eps, float* y, float* mean, float* rstd);
// dx written; dgamma/dbeta accumulated (either may be null).
void layer_norm_backward(const float* x, const float* gamma, const float* mean, const float* rstd,
                         const float* dy, int rows, int cols, float* dx, float* dgamma,
                         float* dbeta);

// Multi-head scaled dot-product attention on packed rows. q is Nq x C, k and v
// are Nk x C, C = heads * head_dim. probs receives heads x Nq x Nk.
void attention_forward(const float* q, const float* k, const float* v, int Nq, int Nk, int C,
                       int heads, float* out, float* probs);
// dq/dk/dv are written (not accumulated).
void attention_backward(const float* q, const float* k, const float* v, const float* probs,
                        const float* dout, int Nq, int Nk, int C, int heads, float* dq, float* dk,
                        float* dv);

// Dense contingency table between two label rasters whose labels were already
// compacted to [0, n_a) and [0, n_b). Returns row-major n_a x n_b counts.
std::vector<std::int64_t> contingency_counts(std::span<const std::int32_t> a,
                                             std::span<const std::int32_t> b, int n_a, int n_b);

namespace reference {

void gemm(Trans ta, Trans tb, int M, int N, int K, const float* A, const float* B, float* C,
          bool accumulate);
void im2col(const float* x, int C, int H, int W, int k, int stride, int pad, float* col);
void col2im_add(const float* col, int C, int H, int W, int k, int stride, int pad, float* x);
void layer_norm_forward(const float* x, const float* gamma, const float* beta, int rows, int cols,
                        float eps, float* y, float* mean, float* rstd);
void layer_norm_backward(const float* x, const float* gamma, const float* mean, const float* rstd,
                         const float* dy, int rows, int cols, float* dx, float* dgamma,
                         float* dbeta);
void attention_forward(const float* q, const float* k, const float* v, int Nq, int Nk, int C,
                       int heads, float* out, float* probs);
void attention_backward(const float* q, const float* k, const float* v, const float* probs,
                        const float* dout, int Nq, int Nk, int C, int heads, float* dq, float* dk,
                        float* dv);
std::vector<std::int64_t> contingency_counts(std::span<const std::int32_t> a,
                                             std::span<const std::int32_t> b, int n_a, int n_b);

}  // namespace reference

// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int max_threads();

}  // namespace planesam::kernels
