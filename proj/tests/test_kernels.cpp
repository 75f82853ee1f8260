#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "planesam/kernels.hpp"

namespace k = planesam::kernels;

namespace {

std::vector<float> random_vec(std::size_t n, std::mt19937& rng) {
    std::normal_distribution<float> dist(0.0f, 1.0f);
    std::vector<float> v(n);
    for (float& x : v) x = dist(rng);
    return v;
}

void check_close(const std::vector<float>& a, const std::vector<float>& b, float tol) {
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const float scale = std::max(1.0f, std::fabs(b[i]));
        CHECK_MESSAGE(std::fabs(a[i] - b[i]) <= tol * scale, "index " << i << ": " << a[i] << " vs " << b[i]);
    }
}

}  // namespace

TEST_CASE("gemm matches the serial reference for every transpose combination") {
    std::mt19937 rng(1);
    const int dims[][3] = {{1, 1, 1}, {3, 5, 7}, {17, 33, 9}, {64, 48, 130}, {5, 100, 3}};
    for (auto [M, N, K] : dims) {
        for (int t = 0; t < 4; ++t) {
            const auto ta = (t & 1) ? k::Trans::Yes : k::Trans::No;
            const auto tb = (t & 2) ? k::Trans::Yes : k::Trans::No;
            auto A = random_vec(static_cast<std::size_t>(M) * K, rng);
            auto B = random_vec(static_cast<std::size_t>(K) * N, rng);
            auto C0 = random_vec(static_cast<std::size_t>(M) * N, rng);
            auto C1 = C0;
            k::gemm(ta, tb, M, N, K, A.data(), B.data(), C0.data(), true);
            k::reference::gemm(ta, tb, M, N, K, A.data(), B.data(), C1.data(), true);
            check_close(C0, C1, 1e-4f);
            k::gemm(ta, tb, M, N, K, A.data(), B.data(), C0.data(), false);
            k::reference::gemm(ta, tb, M, N, K, A.data(), B.data(), C1.data(), false);
            check_close(C0, C1, 1e-4f);
        }
    }
}

TEST_CASE("gemm with K = 0 zeroes or preserves the output") {
    std::vector<float> C{1.0f, 2.0f};
    k::gemm(k::Trans::No, k::Trans::No, 1, 2, 0, nullptr, nullptr, C.data(), true);
    CHECK(C[0] == 1.0f);
    k::gemm(k::Trans::No, k::Trans::No, 1, 2, 0, nullptr, nullptr, C.data(), false);
    CHECK(C[1] == 0.0f);
}

TEST_CASE("im2col and col2im agree with the reference and are adjoint") {
    std::mt19937 rng(2);
    const int C = 3, H = 7, W = 6;
    for (int kz : {1, 3}) {
        for (int stride : {1, 2}) {
            const int pad = kz / 2;
            const int Ho = k::conv_out_size(H, kz, stride, pad);
            const int Wo = k::conv_out_size(W, kz, stride, pad);
            auto x = random_vec(static_cast<std::size_t>(C) * H * W, rng);
            std::vector<float> c0(static_cast<std::size_t>(C) * kz * kz * Ho * Wo), c1(c0.size());
            k::im2col(x.data(), C, H, W, kz, stride, pad, c0.data());
            k::reference::im2col(x.data(), C, H, W, kz, stride, pad, c1.data());
            CHECK(c0 == c1);

            auto y = random_vec(c0.size(), rng);
            std::vector<float> back0(x.size(), 0.0f), back1(x.size(), 0.0f);
            k::col2im_add(y.data(), C, H, W, kz, stride, pad, back0.data());
            k::reference::col2im_add(y.data(), C, H, W, kz, stride, pad, back1.data());
            check_close(back0, back1, 1e-5f);
            // <im2col(x), y> == <x, col2im(y)>
            double lhs = 0.0, rhs = 0.0;
            for (std::size_t i = 0; i < c0.size(); ++i) lhs += static_cast<double>(c0[i]) * y[i];
            for (std::size_t i = 0; i < x.size(); ++i) rhs += static_cast<double>(x[i]) * back0[i];
            CHECK(lhs == doctest::Approx(rhs).epsilon(1e-5));
        }
    }
}

TEST_CASE("layer norm forward and backward match the reference") {
    std::mt19937 rng(3);
    const int R = 9, C = 37;
    auto x = random_vec(static_cast<std::size_t>(R) * C, rng);
    auto g = random_vec(C, rng);
    auto b = random_vec(C, rng);
    auto dy = random_vec(x.size(), rng);
    std::vector<float> y0(x.size()), y1(x.size()), m0(R), m1(R), r0(R), r1(R);
    k::layer_norm_forward(x.data(), g.data(), b.data(), R, C, 1e-5f, y0.data(), m0.data(), r0.data());
    k::reference::layer_norm_forward(x.data(), g.data(), b.data(), R, C, 1e-5f, y1.data(), m1.data(), r1.data());
    check_close(y0, y1, 1e-4f);
    std::vector<float> dx0(x.size()), dx1(x.size()), dg0(C, 0.f), dg1(C, 0.f), db0(C, 0.f), db1(C, 0.f);
    k::layer_norm_backward(x.data(), g.data(), m0.data(), r0.data(), dy.data(), R, C, dx0.data(), dg0.data(), db0.data());
    k::reference::layer_norm_backward(x.data(), g.data(), m1.data(), r1.data(), dy.data(), R, C, dx1.data(), dg1.data(), db1.data());
    check_close(dx0, dx1, 1e-4f);
    check_close(dg0, dg1, 1e-4f);
    check_close(db0, db1, 1e-4f);
}

TEST_CASE("attention kernels match the reference and rows of probabilities sum to one") {
    std::mt19937 rng(4);
    const int Nq = 6, Nk = 11, C = 12, heads = 3;
    auto q = random_vec(static_cast<std::size_t>(Nq) * C, rng);
    auto kk = random_vec(static_cast<std::size_t>(Nk) * C, rng);
    auto v = random_vec(static_cast<std::size_t>(Nk) * C, rng);
    std::vector<float> o0(static_cast<std::size_t>(Nq) * C), o1(o0.size());
    std::vector<float> p0(static_cast<std::size_t>(heads) * Nq * Nk), p1(p0.size());
    k::attention_forward(q.data(), kk.data(), v.data(), Nq, Nk, C, heads, o0.data(), p0.data());
    k::reference::attention_forward(q.data(), kk.data(), v.data(), Nq, Nk, C, heads, o1.data(), p1.data());
    check_close(o0, o1, 1e-5f);
    check_close(p0, p1, 1e-5f);
    for (int r = 0; r < heads * Nq; ++r) {
        double s = 0.0;
        for (int j = 0; j < Nk; ++j) s += p0[static_cast<std::size_t>(r) * Nk + j];
        CHECK(std::fabs(s - 1.0) < 1e-6);
    }

    auto dout = random_vec(o0.size(), rng);
    std::vector<float> dq0(q.size()), dk0(kk.size()), dv0(v.size()), dq1(q.size()), dk1(kk.size()), dv1(v.size());
    k::attention_backward(q.data(), kk.data(), v.data(), p0.data(), dout.data(), Nq, Nk, C, heads, dq0.data(), dk0.data(), dv0.data());
    k::reference::attention_backward(q.data(), kk.data(), v.data(), p1.data(), dout.data(), Nq, Nk, C, heads, dq1.data(), dk1.data(), dv1.data());
    check_close(dq0, dq1, 1e-4f);
    check_close(dk0, dk1, 1e-4f);
    check_close(dv0, dv1, 1e-4f);
}

TEST_CASE("contingency counts are exact and match the reference") {
    std::mt19937 rng(5);
    std::uniform_int_distribution<int> la(0, 4), lb(0, 2);
    std::vector<std::int32_t> a(200000), b(200000);
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = la(rng);
        b[i] = lb(rng);
    }
    auto t0 = k::contingency_counts(a, b, 5, 3);
    auto t1 = k::reference::contingency_counts(a, b, 5, 3);
    CHECK(t0 == t1);
    std::int64_t total = 0;
    for (auto c : t0) total += c;
    CHECK(total == static_cast<std::int64_t>(a.size()));
}
