#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "planesam/data.hpp"
#include "planesam/detector.hpp"
#include "planesam/metrics.hpp"
#include "planesam/model.hpp"
#include "planesam/training.hpp"

namespace planesam {

// Samples listed in a manifest. With `require_annotation` every entry must
// carry a label raster.
std::vector<RgbdSample> load_samples(const std::filesystem::path& manifest, bool require_annotation);
// Samples with their pseudo-labels; entries without pseudo-labels are a DataError.
std::vector<PretrainItem> load_pretrain_items(const std::filesystem::path& manifest);

struct SynthSummary {
    int images = 0;
    std::int64_t planes = 0;
    std::int64_t non_planes = 0;
    std::int64_t pseudo_masks = 0;
};

// Scene i uses seed mix(seed, i); pseudo-labels are the annotation corrupted
// by `pseudo_corruption`. The manifest is written last, via a .partial name.
SynthSummary write_synthetic_dataset(const std::filesystem::path& dir, int count, const SceneConfig& scene,
                                     std::uint64_t seed, float pseudo_corruption);
// The same scenes in memory, annotation attached.
std::vector<RgbdSample> synthetic_dataset(int count, const SceneConfig& scene, std::uint64_t seed);
std::vector<PretrainItem> synthetic_pretrain_items(const std::vector<RgbdSample>& samples, float pseudo_corruption,
                                                   std::uint64_t seed);

// Plane instances labelled 1..n, background and non-plane pixels 0.
Partition ground_truth_partition(const RgbdSample& sample);

struct ImagePrediction {
    std::vector<Detection> detections;
    std::vector<PromptPrediction> prompts;
    Partition partition;
};

// One prompt per detection; overlaps go to the higher detection score.
ImagePrediction predict_image(const PlaneSamModel& model, const RgbdSample& sample,
                              const std::vector<Detection>& detections);

DatasetMetrics evaluate_with_detector(const PlaneSamModel& model, const std::vector<RgbdSample>& samples,
                                      const PlaneDetector& detector, float score_thresh, int max_dets);

// 16-bit single-channel label raster.
void write_partition_png(const std::filesystem::path& path, const Partition& p);
Partition read_partition_png(const std::filesystem::path& path);

}  // namespace planesam
