#include "planesam/losses.hpp"

#include <cmath>

#include "planesam/errors.hpp"

namespace planesam {

void LossWeights::validate() const {
    if (focal < 0.0 || dice < 0.0 || mse < 0.0) throw ConfigError("loss weights must be non-negative");
    if (!(focal > 0.0 || dice > 0.0 || mse > 0.0)) throw ConfigError("at least one loss weight must be positive");
}

void LossConfig::validate() const {
    weights.validate();
    if (!(gamma >= 0.0)) throw ConfigError("loss.gamma must be >= 0");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("loss.alpha must lie in (0, 1)");
    if (!(eps > 0.0)) throw ConfigError("loss.eps must be positive");
}

namespace {

double softplus(double y) { return std::max(y, 0.0) + std::log1p(std::exp(-std::fabs(y))); }

double sigmoid(double y) {
    if (y >= 0.0) return 1.0 / (1.0 + std::exp(-y));
    const double e = std::exp(y);
    return e / (1.0 + e);
}

void check_inputs(std::span<const float> logits, std::span<const float> target) {
    if (logits.size() != target.size()) throw ShapeError("logits and target differ in size");
    if (logits.empty()) throw InputError("empty logits");
    for (float t : target)
        if (t != 0.0f && t != 1.0f) throw InputError("target mask must be binary");
}

}  // namespace

double focal_loss(std::span<const float> logits, std::span<const float> target, double gamma, double alpha,
                  std::vector<double>* grad) {
    check_inputs(logits, target);
    const double n = static_cast<double>(logits.size());
    if (grad) grad->assign(logits.size(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const bool fg = target[i] == 1.0f;
        const double s = fg ? 1.0 : -1.0;
        const double a_t = fg ? alpha : 1.0 - alpha;
        const double z = s * logits[i];
        const double q = sigmoid(-z);      // 1 - p_t
        const double nll = softplus(-z);   // -log p_t
        const double qg = std::pow(q, gamma);
        total += a_t * qg * nll;
        if (grad) (*grad)[i] = -s * a_t * qg * (gamma * (1.0 - q) * nll + q) / n;
    }
    return total / n;
}

double dice_loss(std::span<const float> logits, std::span<const float> target, double eps,
                 std::vector<double>* grad) {
    check_inputs(logits, target);
    std::vector<double> p(logits.size());
    double inter = 0.0, sum_p = 0.0, sum_t = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = sigmoid(logits[i]);
        inter += p[i] * target[i];
        sum_p += p[i];
        sum_t += target[i];
    }
    const double num = 2.0 * inter + eps;
    const double den = sum_p + sum_t + eps;
    if (grad) {
        grad->resize(logits.size());
        for (std::size_t i = 0; i < logits.size(); ++i) {
            const double dl_dp = -(2.0 * target[i] * den - num) / (den * den);
            (*grad)[i] = dl_dp * p[i] * (1.0 - p[i]);
        }
    }
    return 1.0 - num / den;
}

double mask_iou(std::span<const float> logits, std::span<const float> target) {
    if (logits.size() != target.size()) throw ShapeError("logits and target differ in size");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const bool a = logits[i] >= 0.0f;
        const bool b = target[i] != 0.0f;
        inter += a && b;
        uni += a || b;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

LossTerms combined_loss(std::span<const float> logits, std::span<const float> target, const LossConfig& cfg,
                        std::optional<double> iou_pred, std::vector<double>* grad_logits, double* grad_iou) {
    const auto& w = cfg.weights;
    if (w.mse > 0.0 && !iou_pred) throw ConfigError("loss.w_mse > 0 requires an IoU prediction");
    LossTerms t;
    std::vector<double> gf, gd;
    t.focal = focal_loss(logits, target, cfg.gamma, cfg.alpha, grad_logits ? &gf : nullptr);
    t.dice = dice_loss(logits, target, cfg.eps, grad_logits ? &gd : nullptr);
    double residual = 0.0;
    if (iou_pred) {
        residual = *iou_pred - mask_iou(logits, target);
        t.mse = residual * residual;
    }
    t.total = w.focal * t.focal + w.dice * t.dice + w.mse * t.mse;
    if (grad_logits) {
        grad_logits->resize(logits.size());
        for (std::size_t i = 0; i < logits.size(); ++i) (*grad_logits)[i] = w.focal * gf[i] + w.dice * gd[i];
    }
    if (grad_iou) *grad_iou = iou_pred ? 2.0 * w.mse * residual : 0.0;
    return t;
}

std::vector<float> mask_target(const BinaryMask& mask) {
    std::vector<float> t(mask.bits.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (mask.bits[i] > 1) throw InputError("target mask must be binary");
        t[i] = mask.bits[i];
    }
    return t;
}

int argmin_lowest(std::span<const double> values) {
    if (values.empty()) throw InputError("argmin of an empty list");
    int best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] < values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    return best;
}

MinOfThree min_of_three(const ag::Var& logits, const ag::Var& iou_scores, std::span<const float> target,
                        const LossConfig& cfg) {
    const auto& shape = logits->shape();
    if (shape.size() != 3 || shape[0] != 3) throw ShapeError("min_of_three expects logits [3, H, W]");
    const std::size_t plane = static_cast<std::size_t>(shape[1]) * shape[2];
    if (target.size() != plane) throw ShapeError("target does not match the logit resolution");
    const bool use_iou = cfg.weights.mse > 0.0;
    if (use_iou && (!iou_scores || iou_scores->value.numel() != 3)) {
        throw ConfigError("loss.w_mse > 0 requires three IoU predictions");
    }

    MinOfThree out;
    std::vector<std::vector<double>> grads(3);
    std::vector<double> grad_iou(3, 0.0);
    for (int m = 0; m < 3; ++m) {
        std::span<const float> row(logits->value.data() + m * plane, plane);
        std::optional<double> pred;
        if (use_iou) pred = iou_scores->value[m];
        out.candidate_losses.push_back(combined_loss(row, target, cfg, pred, &grads[m], &grad_iou[m]).total);
    }
    out.index = argmin_lowest(out.candidate_losses);

    const int chosen = out.index;
    Tensor value({1}, static_cast<float>(out.candidate_losses[chosen]));
    std::vector<ag::Var> parents{logits};
    if (use_iou) parents.push_back(iou_scores);
    auto row_grad = std::move(grads[chosen]);
    const double iou_grad = grad_iou[chosen];
    out.loss = ag::make_node(std::move(value), parents, [logits, iou_scores, row_grad, iou_grad, chosen, plane,
                                                         use_iou](ag::Node& self) {
        const double g = self.grad[0];
        if (logits->requires_grad) {
            float* dst = logits->grad_buffer().data() + chosen * plane;
            for (std::size_t i = 0; i < plane; ++i) dst[i] += static_cast<float>(g * row_grad[i]);
        }
        if (use_iou && iou_scores->requires_grad) iou_scores->grad_buffer()[chosen] += static_cast<float>(g * iou_grad);
    });
    return out;
}

}  // namespace planesam
