#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "planesam/data.hpp"

namespace planesam {

// Label raster: 0 = non-plane background, k >= 1 = instance k.
struct Partition {
    int height = 0;
    int width = 0;
    std::vector<std::int32_t> labels;

    Partition() = default;
    Partition(int h, int w) : height(h), width(w), labels(static_cast<std::size_t>(h) * w, 0) {}
    Partition(int h, int w, std::vector<std::int32_t> l) : height(h), width(w), labels(std::move(l)) {}
    std::size_t size() const noexcept { return labels.size(); }
};

struct ContingencyTable {
    std::vector<std::int32_t> pred_labels;  // sorted distinct labels (row keys)
    std::vector<std::int32_t> gt_labels;    // sorted distinct labels (column keys)
    std::vector<std::int64_t> counts;       // rows x cols, row-major
    std::vector<std::int64_t> pred_area;
    std::vector<std::int64_t> gt_area;
    std::int64_t total = 0;

    std::int64_t at(std::size_t i, std::size_t j) const { return counts[i * gt_labels.size() + j]; }
};

ContingencyTable contingency(const Partition& pred, const Partition& gt);

double rand_index(const Partition& pred, const Partition& gt);
double variation_of_information(const Partition& pred, const Partition& gt);  // nats
double segmentation_covering(const Partition& pred, const Partition& gt);

struct PartitionMetrics {
    double voi = 0.0;
    double ri = 0.0;
    double sc = 0.0;
};

PartitionMetrics evaluate_pair(const Partition& pred, const Partition& gt);

struct EvaluationItem {
    std::string id;
    Partition pred;
    Partition gt;
};

struct DatasetMetrics {
    std::vector<std::pair<std::string, PartitionMetrics>> per_image;
    PartitionMetrics mean;
};

// Unweighted mean over images; errors are rethrown naming the image.
DatasetMetrics evaluate_dataset(const std::vector<EvaluationItem>& items);

// Each pixel goes to the highest-scored mask covering it (earliest mask on
// equal scores) and gets label index + 1; uncovered pixels are background.
Partition partition_from_masks(const std::vector<BinaryMask>& masks, const std::vector<float>& scores, int height,
                               int width);

}  // namespace planesam
