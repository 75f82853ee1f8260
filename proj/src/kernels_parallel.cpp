#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "planesam/kernels.hpp"

namespace planesam::kernels {

namespace {

// Register tile of the gemm micro-kernel.
constexpr int kMR = 4;
constexpr int kNR = 16;
// Below this many multiply-adds the OpenMP fork costs more than it saves.
constexpr long kParallelWork = 1L << 16;

void transpose(const float* src, int rows, int cols, float* dst) {
#pragma omp parallel for schedule(static) if (static_cast<long>(rows) * cols > kParallelWork)
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) dst[static_cast<long>(c) * rows + r] = src[static_cast<long>(r) * cols + c];
    }
}

inline void micro_full(int K, const float* A, int lda, const float* B, int ldb, float* C, int ldc,
                       bool accumulate) {
    float acc[kMR][kNR] = {};
    for (int k = 0; k < K; ++k) {
        const float* b = B + static_cast<long>(k) * ldb;
        for (int r = 0; r < kMR; ++r) {
            const float a = A[static_cast<long>(r) * lda + k];
#pragma omp simd
            for (int j = 0; j < kNR; ++j) acc[r][j] += a * b[j];
        }
    }
    for (int r = 0; r < kMR; ++r) {
        float* c = C + static_cast<long>(r) * ldc;
        if (accumulate) {
#pragma omp simd
            for (int j = 0; j < kNR; ++j) c[j] += acc[r][j];
        } else {
#pragma omp simd
            for (int j = 0; j < kNR; ++j) c[j] = acc[r][j];
        }
    }
}

inline void micro_edge(int mr, int nr, int K, const float* A, int lda, const float* B, int ldb,
                       float* C, int ldc, bool accumulate) {
    float acc[kMR][kNR] = {};
    for (int k = 0; k < K; ++k) {
        const float* b = B + static_cast<long>(k) * ldb;
        for (int r = 0; r < mr; ++r) {
            const float a = A[static_cast<long>(r) * lda + k];
            for (int j = 0; j < nr; ++j) acc[r][j] += a * b[j];
        }
    }
    for (int r = 0; r < mr; ++r) {
        float* c = C + static_cast<long>(r) * ldc;
        for (int j = 0; j < nr; ++j) c[j] = accumulate ? c[j] + acc[r][j] : acc[r][j];
    }
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void gemm(Trans ta, Trans tb, int M, int N, int K, const float* A, const float* B, float* C,
          bool accumulate) {
    if (M <= 0 || N <= 0) return;
    if (K <= 0) {
        if (!accumulate) std::fill(C, C + static_cast<long>(M) * N, 0.0f);
        return;
    }
    std::vector<float> a_packed;
    std::vector<float> b_packed;
    if (ta == Trans::Yes) {
        a_packed.resize(static_cast<std::size_t>(M) * K);
        transpose(A, K, M, a_packed.data());
        A = a_packed.data();
    }
    if (tb == Trans::Yes) {
        b_packed.resize(static_cast<std::size_t>(K) * N);
        transpose(B, N, K, b_packed.data());
        B = b_packed.data();
    }
    const int row_tiles = (M + kMR - 1) / kMR;
    const int col_tiles = (N + kNR - 1) / kNR;
    const long work = static_cast<long>(M) * N * K;
#pragma omp parallel for collapse(2) schedule(static) if (work > kParallelWork)
    for (int jt = 0; jt < col_tiles; ++jt) {
        for (int it = 0; it < row_tiles; ++it) {
            const int i0 = it * kMR;
            const int j0 = jt * kNR;
            const int mr = std::min(kMR, M - i0);
            const int nr = std::min(kNR, N - j0);
            const float* a = A + static_cast<long>(i0) * K;
            const float* b = B + j0;
            float* c = C + static_cast<long>(i0) * N + j0;
            if (mr == kMR && nr == kNR) {
                micro_full(K, a, K, b, N, c, N, accumulate);
            } else {
                micro_edge(mr, nr, K, a, K, b, N, c, N, accumulate);
            }
        }
    }
}

int conv_out_size(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

void im2col(const float* x, int C, int H, int W, int k, int stride, int pad, float* col) {
    const int Ho = conv_out_size(H, k, stride, pad);
    const int Wo = conv_out_size(W, k, stride, pad);
    const int rows = C * k * k;
#pragma omp parallel for schedule(static) if (static_cast<long>(rows) * Ho * Wo > kParallelWork)
    for (int row = 0; row < rows; ++row) {
        const int c = row / (k * k);
        const int ky = (row / k) % k;
        const int kx = row % k;
        float* out = col + static_cast<long>(row) * Ho * Wo;
        const float* img = x + static_cast<long>(c) * H * W;
        for (int oy = 0; oy < Ho; ++oy) {
            const int iy = oy * stride - pad + ky;
            float* orow = out + static_cast<long>(oy) * Wo;
            if (iy < 0 || iy >= H) {
                std::fill(orow, orow + Wo, 0.0f);
                continue;
            }
            for (int ox = 0; ox < Wo; ++ox) {
                const int ix = ox * stride - pad + kx;
                orow[ox] = (ix >= 0 && ix < W) ? img[static_cast<long>(iy) * W + ix] : 0.0f;
            }
        }
    }
}

void col2im_add(const float* col, int C, int H, int W, int k, int stride, int pad, float* x) {
    const int Ho = conv_out_size(H, k, stride, pad);
    const int Wo = conv_out_size(W, k, stride, pad);
    // Parallel over input channels: each channel's image is written by one thread.
#pragma omp parallel for schedule(static) if (static_cast<long>(C) * k * k * Ho * Wo > kParallelWork)
    for (int c = 0; c < C; ++c) {
        float* img = x + static_cast<long>(c) * H * W;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const float* in = col + (static_cast<long>(c) * k * k + ky * k + kx) * Ho * Wo;
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < W) img[static_cast<long>(iy) * W + ix] += in[static_cast<long>(oy) * Wo + ox];
                    }
                }
            }
        }
    }
}

void layer_norm_forward(const float* x, const float* gamma, const float* beta, int rows, int cols,
                        float eps, float* y, float* mean, float* rstd) {
#pragma omp parallel for schedule(static) if (static_cast<long>(rows) * cols > kParallelWork)
    for (int r = 0; r < rows; ++r) {
        const float* xr = x + static_cast<long>(r) * cols;
        float* yr = y + static_cast<long>(r) * cols;
        float s = 0.0f;
#pragma omp simd reduction(+ : s)
        for (int c = 0; c < cols; ++c) s += xr[c];
        const float m = s / static_cast<float>(cols);
        float v = 0.0f;
#pragma omp simd reduction(+ : v)
        for (int c = 0; c < cols; ++c) v += (xr[c] - m) * (xr[c] - m);
        const float rs = 1.0f / std::sqrt(v / static_cast<float>(cols) + eps);
        mean[r] = m;
        rstd[r] = rs;
#pragma omp simd
        for (int c = 0; c < cols; ++c) yr[c] = (xr[c] - m) * rs * gamma[c] + beta[c];
    }
}

void layer_norm_backward(const float* x, const float* gamma, const float* mean, const float* rstd,
                         const float* dy, int rows, int cols, float* dx, float* dgamma,
                         float* dbeta) {
    const float inv_n = 1.0f / static_cast<float>(cols);
#pragma omp parallel for schedule(static) if (static_cast<long>(rows) * cols > kParallelWork)
    for (int r = 0; r < rows; ++r) {
        const float* xr = x + static_cast<long>(r) * cols;
        const float* dyr = dy + static_cast<long>(r) * cols;
        float* dxr = dx + static_cast<long>(r) * cols;
        const float m = mean[r];
        const float rs = rstd[r];
        float sum_g = 0.0f;
        float sum_gx = 0.0f;
#pragma omp simd reduction(+ : sum_g, sum_gx)
        for (int c = 0; c < cols; ++c) {
            const float g = dyr[c] * gamma[c];
            sum_g += g;
            sum_gx += g * (xr[c] - m) * rs;
        }
#pragma omp simd
        for (int c = 0; c < cols; ++c) {
            const float xhat = (xr[c] - m) * rs;
            dxr[c] = rs * (dyr[c] * gamma[c] - inv_n * sum_g - xhat * inv_n * sum_gx);
        }
    }
    // Parameter gradients reduce over rows; split over columns instead.
    if (dgamma != nullptr || dbeta != nullptr) {
#pragma omp parallel for schedule(static) if (static_cast<long>(rows) * cols > kParallelWork)
        for (int c = 0; c < cols; ++c) {
            float g = 0.0f;
            float b = 0.0f;
            for (int r = 0; r < rows; ++r) {
                const long idx = static_cast<long>(r) * cols + c;
                g += dy[idx] * (x[idx] - mean[r]) * rstd[r];
                b += dy[idx];
            }
            if (dgamma != nullptr) dgamma[c] += g;
            if (dbeta != nullptr) dbeta[c] += b;
        }
    }
}

namespace {

void pack_head(const float* src, int rows, int C, int head, int d, float* dst) {
    for (int r = 0; r < rows; ++r) {
        std::memcpy(dst + static_cast<long>(r) * d, src + static_cast<long>(r) * C + head * d,
                    sizeof(float) * static_cast<std::size_t>(d));
    }
}

void unpack_head(const float* src, int rows, int C, int head, int d, float* dst) {
    for (int r = 0; r < rows; ++r) {
        std::memcpy(dst + static_cast<long>(r) * C + head * d, src + static_cast<long>(r) * d,
                    sizeof(float) * static_cast<std::size_t>(d));
    }
}

void softmax_rows(float* s, int rows, int cols) {
#pragma omp parallel for schedule(static) if (static_cast<long>(rows) * cols > kParallelWork)
    for (int r = 0; r < rows; ++r) {
        float* row = s + static_cast<long>(r) * cols;
        float mx = -std::numeric_limits<float>::infinity();
        for (int c = 0; c < cols; ++c) mx = std::max(mx, row[c]);
        float sum = 0.0f;
        for (int c = 0; c < cols; ++c) {
            row[c] = std::exp(row[c] - mx);
            sum += row[c];
        }
        const float inv = 1.0f / sum;
#pragma omp simd
        for (int c = 0; c < cols; ++c) row[c] *= inv;
    }
}

}  // namespace

void attention_forward(const float* q, const float* k, const float* v, int Nq, int Nk, int C,
                       int heads, float* out, float* probs) {
    const int d = C / heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(d));
    std::vector<float> qh(static_cast<std::size_t>(Nq) * d);
    std::vector<float> kh(static_cast<std::size_t>(Nk) * d);
    std::vector<float> vh(static_cast<std::size_t>(Nk) * d);
    std::vector<float> oh(static_cast<std::size_t>(Nq) * d);
    for (int h = 0; h < heads; ++h) {
        pack_head(q, Nq, C, h, d, qh.data());
        pack_head(k, Nk, C, h, d, kh.data());
        pack_head(v, Nk, C, h, d, vh.data());
        for (float& x : qh) x *= scale;
        float* p = probs + static_cast<long>(h) * Nq * Nk;
        gemm(Trans::No, Trans::Yes, Nq, Nk, d, qh.data(), kh.data(), p, false);
        softmax_rows(p, Nq, Nk);
        gemm(Trans::No, Trans::No, Nq, d, Nk, p, vh.data(), oh.data(), false);
        unpack_head(oh.data(), Nq, C, h, d, out);
    }
}

void attention_backward(const float* q, const float* k, const float* v, const float* probs,
                        const float* dout, int Nq, int Nk, int C, int heads, float* dq, float* dk,
                        float* dv) {
    const int d = C / heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(d));
    std::vector<float> qh(static_cast<std::size_t>(Nq) * d);
    std::vector<float> kh(static_cast<std::size_t>(Nk) * d);
    std::vector<float> vh(static_cast<std::size_t>(Nk) * d);
    std::vector<float> doh(static_cast<std::size_t>(Nq) * d);
    std::vector<float> dph(static_cast<std::size_t>(Nq) * Nk);
    std::vector<float> tmp_q(static_cast<std::size_t>(Nq) * d);
    std::vector<float> tmp_k(static_cast<std::size_t>(Nk) * d);
    for (int h = 0; h < heads; ++h) {
        pack_head(q, Nq, C, h, d, qh.data());
        pack_head(k, Nk, C, h, d, kh.data());
        pack_head(v, Nk, C, h, d, vh.data());
        pack_head(dout, Nq, C, h, d, doh.data());
        const float* p = probs + static_cast<long>(h) * Nq * Nk;
        // dV = P^T dO
        gemm(Trans::Yes, Trans::No, Nk, d, Nq, p, doh.data(), tmp_k.data(), false);
        unpack_head(tmp_k.data(), Nk, C, h, d, dv);
        // dP = dO V^T, then softmax backward in place: dS = P * (dP - rowsum(P * dP))
        gemm(Trans::No, Trans::Yes, Nq, Nk, d, doh.data(), vh.data(), dph.data(), false);
#pragma omp parallel for schedule(static) if (static_cast<long>(Nq) * Nk > kParallelWork)
        for (int i = 0; i < Nq; ++i) {
            const float* pr = p + static_cast<long>(i) * Nk;
            float* gr = dph.data() + static_cast<long>(i) * Nk;
            float dot = 0.0f;
            for (int j = 0; j < Nk; ++j) dot += pr[j] * gr[j];
            for (int j = 0; j < Nk; ++j) gr[j] = pr[j] * (gr[j] - dot) * scale;
        }
        gemm(Trans::No, Trans::No, Nq, d, Nk, dph.data(), kh.data(), tmp_q.data(), false);
        unpack_head(tmp_q.data(), Nq, C, h, d, dq);
        gemm(Trans::Yes, Trans::No, Nk, d, Nq, dph.data(), qh.data(), tmp_k.data(), false);
        unpack_head(tmp_k.data(), Nk, C, h, d, dk);
    }
}

std::vector<std::int64_t> contingency_counts(std::span<const std::int32_t> a,
                                             std::span<const std::int32_t> b, int n_a, int n_b) {
    const std::size_t cells = static_cast<std::size_t>(n_a) * static_cast<std::size_t>(n_b);
    std::vector<std::int64_t> table(cells, 0);
    const long n = static_cast<long>(a.size());
#ifdef _OPENMP
    const int threads = (n > kParallelWork) ? omp_get_max_threads() : 1;
#else
    const int threads = 1;
#endif
    if (threads == 1) {
        for (long i = 0; i < n; ++i) ++table[static_cast<std::size_t>(a[i]) * n_b + b[i]];
        return table;
    }
    // Integer counts: per-thread tables merged afterwards give an exact result.
    std::vector<std::vector<std::int64_t>> local(static_cast<std::size_t>(threads),
                                                 std::vector<std::int64_t>(cells, 0));
#pragma omp parallel num_threads(threads)
    {
#ifdef _OPENMP
        auto& mine = local[static_cast<std::size_t>(omp_get_thread_num())];
#else
        auto& mine = local[0];
#endif
#pragma omp for schedule(static)
        for (long i = 0; i < n; ++i) ++mine[static_cast<std::size_t>(a[i]) * n_b + b[i]];
    }
    for (const auto& part : local) {
        for (std::size_t c = 0; c < cells; ++c) table[c] += part[c];
    }
    return table;
}

}  // namespace planesam::kernels
