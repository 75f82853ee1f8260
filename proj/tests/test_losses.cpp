#include <cmath>
#include <random>

#include "doctest.h"
#include "planesam/errors.hpp"
#include "planesam/losses.hpp"

using namespace planesam;

namespace {

// Naive, unstabilised reference forms.
double oracle_bce(const std::vector<float>& x, const std::vector<float>& t) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(x[i])));
        s += -(t[i] * std::log(p) + (1.0 - t[i]) * std::log(1.0 - p));
    }
    return s / static_cast<double>(x.size());
}

double oracle_focal(const std::vector<float>& x, const std::vector<float>& t, double gamma, double alpha) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(x[i])));
        const double pt = t[i] == 1.0f ? p : 1.0 - p;
        const double at = t[i] == 1.0f ? alpha : 1.0 - alpha;
        s += -at * std::pow(1.0 - pt, gamma) * std::log(pt);
    }
    return s / static_cast<double>(x.size());
}

struct Fixture {
    std::vector<float> logits;
    std::vector<float> target;
};

Fixture random_fixture(std::uint32_t seed, int n = 64) {
    std::mt19937 rng(seed);
    std::normal_distribution<float> nd(0.0f, 1.5f);
    std::bernoulli_distribution bd(0.4);
    Fixture f;
    for (int i = 0; i < n; ++i) {
        f.logits.push_back(nd(rng));
        f.target.push_back(bd(rng) ? 1.0f : 0.0f);
    }
    return f;
}

// Central differences with the step measured after float rounding.
template <class F>
void check_fd(const Fixture& fx, F loss_fn) {
    std::vector<double> analytic;
    loss_fn(fx.logits, &analytic);
    for (std::size_t i = 0; i < fx.logits.size(); ++i) {
        auto up = fx.logits, down = fx.logits;
        up[i] += 1e-2f;
        down[i] -= 1e-2f;
        const double step = static_cast<double>(up[i]) - static_cast<double>(down[i]);
        const double numeric = (loss_fn(up, nullptr) - loss_fn(down, nullptr)) / step;
        const double rel = std::fabs(numeric - analytic[i]) / std::max(std::fabs(analytic[i]), 1e-12);
        CHECK_MESSAGE(rel < 1e-3, "pixel " << i << " analytic " << analytic[i] << " numeric " << numeric);
    }
}

}  // namespace

TEST_CASE("focal loss closed-form values") {
    std::vector<float> x{20.0f}, t{1.0f};
    CHECK(focal_loss(x, t, 2.0, 0.25) < 1e-6);

    x = {0.0f};
    const double expected = -0.25 * 0.5 * 0.5 * std::log(0.5);
    CHECK(focal_loss(x, t, 2.0, 0.25) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(0.04332).epsilon(1e-4));

    auto fx = random_fixture(1);
    CHECK(focal_loss(fx.logits, fx.target, 0.0, 0.5) ==
          doctest::Approx(0.5 * oracle_bce(fx.logits, fx.target)).epsilon(1e-12));
    CHECK(focal_loss(fx.logits, fx.target, 2.0, 0.25) ==
          doctest::Approx(oracle_focal(fx.logits, fx.target, 2.0, 0.25)).epsilon(1e-12));
}

TEST_CASE("focal loss stays finite for extreme logits") {
    std::vector<float> x{-200.0f, 200.0f}, t{1.0f, 0.0f};
    const double v = focal_loss(x, t, 2.0, 0.25);
    CHECK(std::isfinite(v));
    CHECK(v > 0.0);
}

TEST_CASE("dice loss values") {
    std::vector<float> t{1, 1, 0, 0, 1, 0};
    std::vector<float> perfect;
    for (float v : t) perfect.push_back(v == 1.0f ? 30.0f : -30.0f);
    CHECK(dice_loss(perfect, t, 1.0) < 1e-3);

    // Two hard-assigned predicted pixels, two target pixels, one shared.
    std::vector<float> x{40.0f, 40.0f, -40.0f, -40.0f};
    std::vector<float> y{1.0f, 0.0f, 1.0f, 0.0f};
    CHECK(dice_loss(x, y, 1e-12) == doctest::Approx(0.5).epsilon(1e-9));

    // Disjoint large regions.
    std::vector<float> big_x(2000, -30.0f), big_t(2000, 0.0f);
    for (int i = 0; i < 1000; ++i) big_x[i] = 30.0f;
    for (int i = 1000; i < 2000; ++i) big_t[i] = 1.0f;
    const double d = dice_loss(big_x, big_t, 1.0);
    CHECK(d > 0.999);
    CHECK(d <= 1.0);
}

TEST_CASE("non-binary targets are rejected") {
    std::vector<float> x{0.0f, 1.0f}, t{0.5f, 1.0f};
    CHECK_THROWS_AS(focal_loss(x, t, 2.0, 0.25), InputError);
    CHECK_THROWS_AS(dice_loss(x, t, 1.0), InputError);
    BinaryMask m(1, 2);
    m.bits = {0, 2};
    CHECK_THROWS_AS(mask_target(m), InputError);
}

TEST_CASE("analytic gradients match central differences") {
    for (std::uint32_t seed = 10; seed < 14; ++seed) {
        auto fx = random_fixture(seed);
        check_fd(fx, [&](const std::vector<float>& x, std::vector<double>* g) {
            return focal_loss(x, fx.target, 2.0, 0.25, g);
        });
        check_fd(fx, [&](const std::vector<float>& x, std::vector<double>* g) {
            return dice_loss(x, fx.target, 1.0, g);
        });
    }
}

TEST_CASE("combined loss is the declared linear combination") {
    auto fx = random_fixture(20);
    const double a = focal_loss(fx.logits, fx.target, 2.0, 0.25);
    const double b = dice_loss(fx.logits, fx.target, 1.0);

    LossConfig cfg;
    cfg.weights = LossWeights::planesam();
    CHECK(combined_loss(fx.logits, fx.target, cfg).total == a + b);

    cfg.weights = LossWeights::efficientsam();
    const double iou_pred = 0.3;
    const double actual = mask_iou(fx.logits, fx.target);
    const double mse = (iou_pred - actual) * (iou_pred - actual);
    CHECK(combined_loss(fx.logits, fx.target, cfg, iou_pred).total == 20.0 * a + b + mse);
    CHECK_THROWS_AS(combined_loss(fx.logits, fx.target, cfg), ConfigError);

    cfg.weights = {0.0, 1.0, 0.0};
    CHECK(combined_loss(fx.logits, fx.target, cfg).total == b);

    LossWeights w{3.0, 2.0, 0.0};
    cfg.weights = w;
    const double base = combined_loss(fx.logits, fx.target, cfg).total;
    cfg.weights = {w.focal * 2.5, w.dice * 2.5, 0.0};
    CHECK(combined_loss(fx.logits, fx.target, cfg).total == doctest::Approx(2.5 * base).epsilon(1e-14));
}

TEST_CASE("loss weight validation") {
    CHECK_THROWS_AS((LossWeights{0, 0, 0}.validate()), ConfigError);
    CHECK_THROWS_AS((LossWeights{-1, 1, 0}.validate()), ConfigError);
    LossConfig cfg;
    cfg.alpha = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("lowest-index argmin") {
    std::vector<double> v{0.5, 0.2, 0.9};
    CHECK(argmin_lowest(v) == 1);
    v = {0.3, 0.7, 0.3};
    CHECK(argmin_lowest(v) == 0);
}

namespace {

ag::Var triplet_from_rows(const std::vector<std::vector<float>>& rows, int h, int w) {
    Tensor t({3, h, w});
    for (int m = 0; m < 3; ++m)
        for (int i = 0; i < h * w; ++i) t[m * h * w + i] = rows[m][i];
    return ag::parameter(std::move(t));
}

}  // namespace

TEST_CASE("min of three routes gradient to the chosen candidate only") {
    auto good = random_fixture(30, 16);
    std::vector<float> target = good.target;
    std::vector<float> best, mid, worst;
    for (float t : target) {
        best.push_back(t == 1.0f ? 4.0f : -4.0f);
        mid.push_back(t == 1.0f ? 1.0f : -1.0f);
        worst.push_back(t == 1.0f ? -3.0f : 3.0f);
    }
    LossConfig cfg;
    for (int perm = 0; perm < 3; ++perm) {
        std::vector<std::vector<float>> rows{mid, worst, mid};
        rows[static_cast<std::size_t>(perm)] = best;
        auto logits = triplet_from_rows(rows, 4, 4);
        auto r = min_of_three(logits, nullptr, target, cfg);
        CHECK(r.index == perm);
        CHECK(static_cast<double>(r.loss->value[0]) ==
              doctest::Approx(combined_loss(best, target, cfg).total).epsilon(1e-6));
        ag::backward(r.loss);
        for (int m = 0; m < 3; ++m) {
            bool nonzero = false;
            for (int i = 0; i < 16; ++i) nonzero = nonzero || logits->grad[m * 16 + i] != 0.0f;
            CHECK(nonzero == (m == perm));
        }
    }

    auto tied = triplet_from_rows({mid, worst, mid}, 4, 4);
    CHECK(min_of_three(tied, nullptr, target, cfg).index == 0);

    // Scaling every weight keeps the argmin.
    auto logits = triplet_from_rows({mid, best, worst}, 4, 4);
    cfg.weights = {7.0, 7.0, 0.0};
    CHECK(min_of_three(logits, nullptr, target, cfg).index == 1);
}

TEST_CASE("min of three with the mse term uses the chosen IoU prediction") {
    auto fx = random_fixture(40, 16);
    LossConfig cfg;
    cfg.weights = LossWeights::efficientsam();
    auto logits = triplet_from_rows({fx.logits, fx.logits, fx.logits}, 4, 4);
    auto iou = ag::parameter(Tensor({3}, std::vector<float>{0.9f, 0.1f, 0.5f}));
    auto r = min_of_three(logits, iou, fx.target, cfg);
    const double actual = mask_iou(fx.logits, fx.target);
    int expected = 0;
    double best = 1e9;
    for (int m = 0; m < 3; ++m) {
        const double e = std::pow(iou->value[m] - actual, 2);
        if (e < best) best = e, expected = m;
    }
    CHECK(r.index == expected);
    ag::backward(r.loss);
    for (int m = 0; m < 3; ++m) CHECK((iou->grad[m] != 0.0f) == (m == expected));
    CHECK_THROWS_AS(min_of_three(logits, nullptr, fx.target, cfg), ConfigError);
}
