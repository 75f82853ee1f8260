#include "planesam/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "planesam/errors.hpp"
#include "planesam/kernels.hpp"

namespace planesam {

namespace {

void check_pair(const Partition& pred, const Partition& gt) {
    if (pred.height != gt.height || pred.width != gt.width || pred.size() != gt.size() ||
        pred.size() != static_cast<std::size_t>(pred.height) * pred.width) {
        throw ShapeError("partitions differ in shape");
    }
}

// Sorted distinct labels and the raster rewritten as indices into them.
std::pair<std::vector<std::int32_t>, std::vector<std::int32_t>> compact(const Partition& p) {
    std::vector<std::int32_t> keys = p.labels;
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    if (!keys.empty() && keys.front() < 0) throw InputError("partition labels must be non-negative");
    std::vector<std::int32_t> dense(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        dense[i] = static_cast<std::int32_t>(std::lower_bound(keys.begin(), keys.end(), p.labels[i]) - keys.begin());
    }
    return {std::move(keys), std::move(dense)};
}

std::int64_t pairs(std::int64_t n) { return n * (n - 1) / 2; }

}  // namespace

ContingencyTable contingency(const Partition& pred, const Partition& gt) {
    check_pair(pred, gt);
    auto [pk, pd] = compact(pred);
    auto [gk, gd] = compact(gt);
    ContingencyTable t;
    t.counts = kernels::contingency_counts(pd, gd, static_cast<int>(pk.size()), static_cast<int>(gk.size()));
    t.pred_labels = std::move(pk);
    t.gt_labels = std::move(gk);
    t.pred_area.assign(t.pred_labels.size(), 0);
    t.gt_area.assign(t.gt_labels.size(), 0);
    for (std::size_t i = 0; i < t.pred_labels.size(); ++i) {
        for (std::size_t j = 0; j < t.gt_labels.size(); ++j) {
            t.pred_area[i] += t.at(i, j);
            t.gt_area[j] += t.at(i, j);
        }
    }
    t.total = static_cast<std::int64_t>(pred.size());
    return t;
}

double rand_index(const Partition& pred, const Partition& gt) {
    check_pair(pred, gt);
    if (pred.size() < 2) throw InputError("rand index needs at least two pixels");
    const auto t = contingency(pred, gt);
    std::int64_t joint = 0, rows = 0, cols = 0;
    for (auto n : t.counts) joint += pairs(n);
    for (auto n : t.pred_area) rows += pairs(n);
    for (auto n : t.gt_area) cols += pairs(n);
    const std::int64_t all = pairs(t.total);
    // Pairs together in both plus pairs apart in both.
    const std::int64_t agree = joint + (all - rows - cols + joint);
    return static_cast<double>(agree) / static_cast<double>(all);
}

double variation_of_information(const Partition& pred, const Partition& gt) {
    check_pair(pred, gt);
    if (pred.size() < 2) throw InputError("variation of information needs at least two pixels");
    const auto t = contingency(pred, gt);
    const double n = static_cast<double>(t.total);
    // VOI = -sum p_ij [log(p_ij / p_i) + log(p_ij / q_j)]. Terms are summed in
    // sorted order so swapping the arguments gives the identical value.
    std::vector<double> terms;
    for (std::size_t i = 0; i < t.pred_labels.size(); ++i) {
        for (std::size_t j = 0; j < t.gt_labels.size(); ++j) {
            const auto c = t.at(i, j);
            if (c == 0) continue;
            const double nij = static_cast<double>(c);
            const double a = std::log(nij / static_cast<double>(t.pred_area[i]));
            const double b = std::log(nij / static_cast<double>(t.gt_area[j]));
            terms.push_back(-(nij / n) * (a + b));
        }
    }
    std::sort(terms.begin(), terms.end());
    double voi = 0.0;
    for (double v : terms) voi += v;
    return std::max(voi, 0.0);
}

double segmentation_covering(const Partition& pred, const Partition& gt) {
    check_pair(pred, gt);
    const auto t = contingency(pred, gt);
    std::int64_t plane_pixels = 0;
    double covered = 0.0;
    for (std::size_t j = 0; j < t.gt_labels.size(); ++j) {
        if (t.gt_labels[j] == 0) continue;
        plane_pixels += t.gt_area[j];
        double best = 0.0;
        for (std::size_t i = 0; i < t.pred_labels.size(); ++i) {
            if (t.pred_labels[i] == 0) continue;
            const std::int64_t inter = t.at(i, j);
            const std::int64_t uni = t.gt_area[j] + t.pred_area[i] - inter;
            best = std::max(best, static_cast<double>(inter) / static_cast<double>(uni));
        }
        covered += static_cast<double>(t.gt_area[j]) * best;
    }
    if (plane_pixels == 0) throw InputError("segmentation covering needs at least one ground-truth plane");
    return covered / static_cast<double>(plane_pixels);
}

PartitionMetrics evaluate_pair(const Partition& pred, const Partition& gt) {
    return {variation_of_information(pred, gt), rand_index(pred, gt), segmentation_covering(pred, gt)};
}

DatasetMetrics evaluate_dataset(const std::vector<EvaluationItem>& items) {
    if (items.empty()) throw InputError("evaluation set is empty");
    DatasetMetrics out;
    for (const auto& item : items) {
        try {
            out.per_image.emplace_back(item.id, evaluate_pair(item.pred, item.gt));
        } catch (const InputError& e) {
            throw InputError("image " + item.id + ": " + e.what());
        }
    }
    for (const auto& [id, m] : out.per_image) {
        out.mean.voi += m.voi;
        out.mean.ri += m.ri;
        out.mean.sc += m.sc;
    }
    const double k = static_cast<double>(out.per_image.size());
    out.mean.voi /= k;
    out.mean.ri /= k;
    out.mean.sc /= k;
    return out;
}

Partition partition_from_masks(const std::vector<BinaryMask>& masks, const std::vector<float>& scores, int height,
                               int width) {
    if (masks.size() != scores.size()) throw InputError("one score per mask required");
    Partition p(height, width);
    std::vector<float> best(p.size(), 0.0f);
    for (std::size_t m = 0; m < masks.size(); ++m) {
        if (masks[m].height != height || masks[m].width != width) throw ShapeError("mask size mismatch");
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (!masks[m].bits[i]) continue;
            if (p.labels[i] == 0 || scores[m] > best[i]) {
                p.labels[i] = static_cast<std::int32_t>(m + 1);
                best[i] = scores[m];
            }
        }
    }
    return p;
}

}  // namespace planesam
