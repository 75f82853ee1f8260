#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "planesam/data.hpp"

namespace planesam {

enum class DetectionLabel { plane, non_plane };

struct Detection {
    BoxPrompt box;
    float score = 1.0f;
    DetectionLabel label = DetectionLabel::plane;
};

// Tight boxes of the plane masks, jittered by up to noise_frac of each side.
std::vector<Detection> oracle_boxes(const PlaneAnnotation& annotation, float noise_frac, Rng& rng, int image_width,
                                    int image_height);

class PlaneDetector {
public:
    virtual ~PlaneDetector() = default;
    virtual std::vector<Detection> detect(const RgbdSample& sample) const = 0;
};

// Uses the sample's own annotation. The jitter stream for an image depends
// only on (seed, image id), so results do not depend on call order.
class OracleDetector final : public PlaneDetector {
public:
    OracleDetector(float noise_frac, std::uint64_t seed);
    std::vector<Detection> detect(const RgbdSample& sample) const override;

private:
    float noise_frac_;
    std::uint64_t seed_;
};

// Boxes produced by an external detector, one line per image:
// {"image_id": ..., "boxes": [[x0, y0, x1, y1], ...], "scores": [...]}.
class BoxFileDetector final : public PlaneDetector {
public:
    explicit BoxFileDetector(const std::filesystem::path& path);
    bool has_image(const std::string& id) const { return boxes_.count(id) > 0; }
    std::vector<Detection> detect(const RgbdSample& sample) const override;

private:
    std::map<std::string, std::vector<Detection>> boxes_;
};

std::map<std::string, std::vector<Detection>> read_box_file(const std::filesystem::path& path);
void write_box_file(const std::filesystem::path& path, const std::map<std::string, std::vector<Detection>>& boxes);

// Detections sorted by descending score (stable). Null model -> ConfigError.
std::vector<Detection> detect_planes(const RgbdSample& sample, const PlaneDetector* model);

constexpr int kDefaultMaxDetections = 30;

// Plane detections with score >= threshold, in input order, at most max_dets.
std::vector<Detection> filter_detections(const std::vector<Detection>& dets, float score_thresh,
                                         int max_dets = kDefaultMaxDetections);

// Training recipe an external two-class detector is expected to follow.
struct DetectorTrainingRecipe {
    std::string optimizer = "sgd";
    double lr0 = 0.02;
    std::string schedule = "cosine";
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int batch_size = 8;
    int epochs = 10;
};

enum class DetectorKind { oracle, external };

struct DetectorConfig {
    DetectorKind kind = DetectorKind::oracle;
    float noise_frac = 0.0f;
    float score_thresh = 0.0f;
    int max_dets = kDefaultMaxDetections;
    std::optional<std::filesystem::path> weights_path;  // box file for `external`
    DetectorTrainingRecipe training;
    void validate() const;
};

}  // namespace planesam
