#pragma once

#include <optional>
#include <span>
#include <vector>

#include "planesam/autograd.hpp"
#include "planesam/data.hpp"

namespace planesam {

struct LossWeights {
    double focal = 1.0;
    double dice = 1.0;
    double mse = 0.0;

    static LossWeights planesam() { return {1.0, 1.0, 0.0}; }
    static LossWeights efficientsam() { return {20.0, 1.0, 1.0}; }
    // Throws ConfigError on negative weights or all-zero weights.
    void validate() const;
};

struct LossConfig {
    LossWeights weights;
    double gamma = 2.0;
    double alpha = 0.25;
    double eps = 1.0;
    void validate() const;
};

// Per-pixel mean of -a_t (1 - p_t)^gamma log p_t. When `grad` is given it
// receives d loss / d logit for every pixel.
double focal_loss(std::span<const float> logits, std::span<const float> target, double gamma, double alpha,
                  std::vector<double>* grad = nullptr);
// 1 - (2 sum p t + eps) / (sum p + sum t + eps), p = sigmoid(logit).
double dice_loss(std::span<const float> logits, std::span<const float> target, double eps,
                 std::vector<double>* grad = nullptr);

// IoU between the thresholded logits (logit >= 0) and the target.
double mask_iou(std::span<const float> logits, std::span<const float> target);

struct LossTerms {
    double focal = 0.0;
    double dice = 0.0;
    double mse = 0.0;
    double total = 0.0;
};

// Weighted sum of the three terms. iou_pred is required iff weights.mse > 0.
// `grad_logits` / `grad_iou` receive the derivatives of `total`.
LossTerms combined_loss(std::span<const float> logits, std::span<const float> target, const LossConfig& cfg,
                        std::optional<double> iou_pred = std::nullopt, std::vector<double>* grad_logits = nullptr,
                        double* grad_iou = nullptr);

// Target mask as 0/1 floats; throws InputError when bits are not binary.
std::vector<float> mask_target(const BinaryMask& mask);

// Index of the smallest value; the lowest index wins ties.
int argmin_lowest(std::span<const double> values);

struct MinOfThree {
    ag::Var loss;  // scalar; gradient flows only into the chosen candidate
    int index = 0;
    std::vector<double> candidate_losses;
};

// logits [3, H, W]; iou_scores [3] (may be null when weights.mse == 0).
// Ties resolve to the lowest index.
MinOfThree min_of_three(const ag::Var& logits, const ag::Var& iou_scores, std::span<const float> target,
                        const LossConfig& cfg);

}  // namespace planesam
