// Serial, unblocked versions of every kernel. Written for clarity; the unit
// tests and the benchmark compare the parallel kernels against these.

#include <cmath>
#include <vector>

#include "planesam/kernels.hpp"

namespace planesam::kernels::reference {

void gemm(Trans ta, Trans tb, int M, int N, int K, const float* A, const float* B, float* C,
          bool accumulate) {
    for (int i = 0; i < M; ++i) {
        for (int j = 0; j < N; ++j) {
            float s = 0.0f;
            for (int k = 0; k < K; ++k) {
                const float a = ta == Trans::No ? A[i * K + k] : A[k * M + i];
                const float b = tb == Trans::No ? B[k * N + j] : B[j * K + k];
                s += a * b;
            }
            C[i * N + j] = accumulate ? C[i * N + j] + s : s;
        }
    }
}

void im2col(const float* x, int C, int H, int W, int k, int stride, int pad, float* col) {
    const int Ho = (H + 2 * pad - k) / stride + 1;
    const int Wo = (W + 2 * pad - k) / stride + 1;
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx)
                for (int oy = 0; oy < Ho; ++oy)
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int iy = oy * stride - pad + ky;
                        const int ix = ox * stride - pad + kx;
                        const bool inside = iy >= 0 && iy < H && ix >= 0 && ix < W;
                        col[((c * k + ky) * k + kx) * Ho * Wo + oy * Wo + ox] =
                            inside ? x[(c * H + iy) * W + ix] : 0.0f;
                    }
}

void col2im_add(const float* col, int C, int H, int W, int k, int stride, int pad, float* x) {
    const int Ho = (H + 2 * pad - k) / stride + 1;
    const int Wo = (W + 2 * pad - k) / stride + 1;
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx)
                for (int oy = 0; oy < Ho; ++oy)
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int iy = oy * stride - pad + ky;
                        const int ix = ox * stride - pad + kx;
                        if (iy >= 0 && iy < H && ix >= 0 && ix < W)
                            x[(c * H + iy) * W + ix] +=
                                col[((c * k + ky) * k + kx) * Ho * Wo + oy * Wo + ox];
                    }
}

void layer_norm_forward(const float* x, const float* gamma, const float* beta, int rows, int cols,
                        float eps, float* y, float* mean, float* rstd) {
    for (int r = 0; r < rows; ++r) {
        double m = 0.0;
        for (int c = 0; c < cols; ++c) m += x[r * cols + c];
        m /= cols;
        double v = 0.0;
        for (int c = 0; c < cols; ++c) v += (x[r * cols + c] - m) * (x[r * cols + c] - m);
        v /= cols;
        const double rs = 1.0 / std::sqrt(v + eps);
        mean[r] = static_cast<float>(m);
        rstd[r] = static_cast<float>(rs);
        for (int c = 0; c < cols; ++c)
            y[r * cols + c] = static_cast<float>((x[r * cols + c] - m) * rs * gamma[c] + beta[c]);
    }
}

void layer_norm_backward(const float* x, const float* gamma, const float* mean, const float* rstd,
                         const float* dy, int rows, int cols, float* dx, float* dgamma,
                         float* dbeta) {
    for (int r = 0; r < rows; ++r) {
        double sum_g = 0.0;
        double sum_gx = 0.0;
        for (int c = 0; c < cols; ++c) {
            const double xhat = (x[r * cols + c] - mean[r]) * rstd[r];
            const double g = dy[r * cols + c] * gamma[c];
            sum_g += g;
            sum_gx += g * xhat;
            if (dgamma) dgamma[c] += static_cast<float>(dy[r * cols + c] * xhat);
            if (dbeta) dbeta[c] += dy[r * cols + c];
        }
        for (int c = 0; c < cols; ++c) {
            const double xhat = (x[r * cols + c] - mean[r]) * rstd[r];
            dx[r * cols + c] = static_cast<float>(
                rstd[r] * (dy[r * cols + c] * gamma[c] - sum_g / cols - xhat * sum_gx / cols));
        }
    }
}

void attention_forward(const float* q, const float* k, const float* v, int Nq, int Nk, int C,
                       int heads, float* out, float* probs) {
    const int d = C / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> s(static_cast<std::size_t>(Nk));
    for (int h = 0; h < heads; ++h) {
        for (int i = 0; i < Nq; ++i) {
            double mx = -1e300;
            for (int j = 0; j < Nk; ++j) {
                double dot = 0.0;
                for (int t = 0; t < d; ++t) dot += q[i * C + h * d + t] * k[j * C + h * d + t];
                s[j] = dot * scale;
                if (s[j] > mx) mx = s[j];
            }
            double sum = 0.0;
            for (int j = 0; j < Nk; ++j) {
                s[j] = std::exp(s[j] - mx);
                sum += s[j];
            }
            for (int j = 0; j < Nk; ++j) probs[(h * Nq + i) * Nk + j] = static_cast<float>(s[j] / sum);
            for (int t = 0; t < d; ++t) {
                double o = 0.0;
                for (int j = 0; j < Nk; ++j) o += s[j] / sum * v[j * C + h * d + t];
                out[i * C + h * d + t] = static_cast<float>(o);
            }
        }
    }
}

void attention_backward(const float* q, const float* k, const float* v, const float* probs,
                        const float* dout, int Nq, int Nk, int C, int heads, float* dq, float* dk,
                        float* dv) {
    const int d = C / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (int i = 0; i < Nq * C; ++i) dq[i] = 0.0f;
    for (int i = 0; i < Nk * C; ++i) dk[i] = 0.0f;
    for (int i = 0; i < Nk * C; ++i) dv[i] = 0.0f;
    std::vector<double> dp(static_cast<std::size_t>(Nk));
    for (int h = 0; h < heads; ++h) {
        for (int i = 0; i < Nq; ++i) {
            const float* p = probs + (h * Nq + i) * Nk;
            double dot = 0.0;
            for (int j = 0; j < Nk; ++j) {
                double g = 0.0;
                for (int t = 0; t < d; ++t) g += dout[i * C + h * d + t] * v[j * C + h * d + t];
                dp[j] = g;
                dot += p[j] * g;
                for (int t = 0; t < d; ++t) dv[j * C + h * d + t] += static_cast<float>(p[j] * dout[i * C + h * d + t]);
            }
            for (int j = 0; j < Nk; ++j) {
                const double ds = p[j] * (dp[j] - dot) * scale;
                for (int t = 0; t < d; ++t) {
                    dq[i * C + h * d + t] += static_cast<float>(ds * k[j * C + h * d + t]);
                    dk[j * C + h * d + t] += static_cast<float>(ds * q[i * C + h * d + t]);
                }
            }
        }
    }
}

std::vector<std::int64_t> contingency_counts(std::span<const std::int32_t> a,
                                             std::span<const std::int32_t> b, int n_a, int n_b) {
    std::vector<std::int64_t> table(static_cast<std::size_t>(n_a) * n_b, 0);
    for (std::size_t i = 0; i < a.size(); ++i) ++table[static_cast<std::size_t>(a[i]) * n_b + b[i]];
    return table;
}

}  // namespace planesam::kernels::reference
