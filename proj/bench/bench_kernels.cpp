// Times the OpenMP kernels against their serial references on the shapes the
// toy backbone actually produces. Prints one row per kernel.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#include "planesam/kernels.hpp"

namespace k = planesam::kernels;

namespace {

std::vector<float> random_vec(std::size_t n, std::mt19937& rng) {
    std::normal_distribution<float> dist(0.0f, 1.0f);
    std::vector<float> v(n);
    for (float& x : v) x = dist(rng);
    return v;
}

// Median wall time in milliseconds over `reps` runs.
double time_ms(const std::function<void()>& fn, int reps) {
    std::vector<double> t;
    fn();
    for (int r = 0; r < reps; ++r) {
        const auto start = std::chrono::steady_clock::now();
        fn();
        t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
    }
    std::nth_element(t.begin(), t.begin() + static_cast<long>(t.size() / 2), t.end());
    return t[t.size() / 2];
}

void report(const char* name, double flops, double ref_ms, double par_ms) {
    std::printf("%-34s %10.3f %10.3f %8.2fx %9.2f\n", name, ref_ms, par_ms, ref_ms / par_ms,
                flops / (par_ms * 1e6));
}

}  // namespace

int main() {
    std::mt19937 rng(7);
    std::printf("threads: %d\n", k::max_threads());
    std::printf("%-34s %10s %10s %9s %9s\n", "kernel", "ref ms", "omp ms", "speedup", "GFLOP/s");

    struct Shape {
        const char* name;
        int M, N, K;
        k::Trans ta, tb;
    };
    const Shape shapes[] = {
        {"gemm qkv 256x576x192 (NT)", 256, 576, 192, k::Trans::No, k::Trans::Yes},
        {"gemm mlp 256x768x192 (NT)", 256, 768, 192, k::Trans::No, k::Trans::Yes},
        {"gemm mlp-out 256x192x768 (NT)", 256, 192, 768, k::Trans::No, k::Trans::Yes},
        {"gemm wgrad 192x768x256 (TN)", 192, 768, 256, k::Trans::Yes, k::Trans::No},
        {"gemm decoder 6x192x192 (NT)", 6, 192, 192, k::Trans::No, k::Trans::Yes},
    };
    for (const auto& s : shapes) {
        auto A = random_vec(static_cast<std::size_t>(s.M) * s.K, rng);
        auto B = random_vec(static_cast<std::size_t>(s.K) * s.N, rng);
        std::vector<float> C(static_cast<std::size_t>(s.M) * s.N);
        const double flops = 2.0 * s.M * s.N * s.K;
        const double ref = time_ms([&] { k::reference::gemm(s.ta, s.tb, s.M, s.N, s.K, A.data(), B.data(), C.data(), false); }, 5);
        const double par = time_ms([&] { k::gemm(s.ta, s.tb, s.M, s.N, s.K, A.data(), B.data(), C.data(), false); }, 20);
        report(s.name, flops, ref, par);
    }

    {
        const int N = 256, C = 192, heads = 3;
        auto q = random_vec(static_cast<std::size_t>(N) * C, rng);
        auto kk = random_vec(static_cast<std::size_t>(N) * C, rng);
        auto v = random_vec(static_cast<std::size_t>(N) * C, rng);
        std::vector<float> out(static_cast<std::size_t>(N) * C);
        std::vector<float> probs(static_cast<std::size_t>(heads) * N * N);
        const double flops = 4.0 * N * N * C;
        const double ref = time_ms([&] { k::reference::attention_forward(q.data(), kk.data(), v.data(), N, N, C, heads, out.data(), probs.data()); }, 3);
        const double par = time_ms([&] { k::attention_forward(q.data(), kk.data(), v.data(), N, N, C, heads, out.data(), probs.data()); }, 10);
        report("attention fwd 256 tok, 3 heads", flops, ref, par);
    }

    {
        const int C = 64, H = 16, W = 16, kz = 3;
        auto x = random_vec(static_cast<std::size_t>(C) * H * W, rng);
        std::vector<float> col(static_cast<std::size_t>(C) * kz * kz * H * W);
        const double ref = time_ms([&] { k::reference::im2col(x.data(), C, H, W, kz, 1, 1, col.data()); }, 10);
        const double par = time_ms([&] { k::im2col(x.data(), C, H, W, kz, 1, 1, col.data()); }, 10);
        report("im2col 64x16x16 k3", 0.0, ref, par);
    }

    {
        const int rows = 256, cols = 192;
        auto x = random_vec(static_cast<std::size_t>(rows) * cols, rng);
        std::vector<float> g(cols, 1.0f), b(cols, 0.0f), y(x.size()), m(rows), r(rows);
        const double ref = time_ms([&] { k::reference::layer_norm_forward(x.data(), g.data(), b.data(), rows, cols, 1e-5f, y.data(), m.data(), r.data()); }, 10);
        const double par = time_ms([&] { k::layer_norm_forward(x.data(), g.data(), b.data(), rows, cols, 1e-5f, y.data(), m.data(), r.data()); }, 10);
        report("layer_norm 256x192", 0.0, ref, par);
    }

    {
        const int n = 640 * 480;
        std::uniform_int_distribution<int> lab(0, 19);
        std::vector<std::int32_t> a(n), bb(n);
        for (int i = 0; i < n; ++i) {
            a[static_cast<std::size_t>(i)] = lab(rng);
            bb[static_cast<std::size_t>(i)] = lab(rng);
        }
        const double ref = time_ms([&] { (void)k::reference::contingency_counts(a, bb, 20, 20); }, 10);
        const double par = time_ms([&] { (void)k::contingency_counts(a, bb, 20, 20); }, 10);
        report("contingency 640x480, 20 labels", 0.0, ref, par);
    }
    return 0;
}
