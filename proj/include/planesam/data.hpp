#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace planesam {

using Rng = std::mt19937_64;

// Interleaved H x W x C float raster.
struct Raster {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> data;

    Raster() = default;
    Raster(int h, int w, int c, float fill = 0.0f)
        : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

    float& at(int y, int x, int c = 0) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    float at(int y, int x, int c = 0) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    bool operator==(const Raster&) const = default;
};

struct BinaryMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> bits;  // 0 or 1, row-major

    BinaryMask() = default;
    BinaryMask(int h, int w) : height(h), width(w), bits(static_cast<std::size_t>(h) * w, 0) {}

    std::uint8_t& at(int y, int x) { return bits[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x]; }
    std::int64_t area() const;
    bool operator==(const BinaryMask&) const = default;
};

// Instance masks plus per-mask plane flag; pixels in no mask are background.
struct PlaneAnnotation {
    std::vector<BinaryMask> masks;
    std::vector<bool> is_plane;

    std::vector<std::size_t> plane_indices() const;
    // Throws FormatError on overlapping masks, empty masks or size mismatch.
    void validate(int height, int width) const;
    // 0 = background (incl. non-plane instances), k >= 1 = k-th plane mask.
    std::vector<std::int32_t> plane_partition() const;
    bool operator==(const PlaneAnnotation&) const = default;
};

struct RgbdSample {
    std::string id;
    Raster rgb;    // H x W x 3, [0, 1]
    Raster depth;  // H x W x 1, metres, 0 = missing
    std::optional<PlaneAnnotation> annotation;

    int height() const noexcept { return rgb.height; }
    int width() const noexcept { return rgb.width; }
    void validate() const;
    bool operator==(const RgbdSample&) const = default;
};

// Automatically generated masks; may overlap.
struct PseudoLabelSet {
    std::vector<BinaryMask> masks;
    std::string source;
};

// Axis-aligned box, half-open pixel convention [min, max).
struct BoxPrompt {
    float x_min = 0.0f;
    float y_min = 0.0f;
    float x_max = 0.0f;
    float y_max = 0.0f;

    float width() const noexcept { return x_max - x_min; }
    float height() const noexcept { return y_max - y_min; }
    // min < max on both axes and overlaps the image rectangle.
    bool valid_for(int image_width, int image_height) const noexcept;
    bool operator==(const BoxPrompt&) const = default;
};

// ---- manifest -------------------------------------------------------------

struct ManifestEntry {
    std::string id;
    std::filesystem::path rgb_path;
    std::filesystem::path depth_path;
    std::optional<std::filesystem::path> label_path;
    std::vector<int> non_plane_ids;                   // label ids that are non-plane instances
    std::vector<std::filesystem::path> pseudo_paths;  // one 8-bit mask raster per pseudo-label
};

// One JSON object per line. Relative paths resolve against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

RgbdSample load_rgbd_sample(const ManifestEntry& entry);
PseudoLabelSet load_pseudo_labels(const ManifestEntry& entry);

// Writes rgb/depth/label rasters under `dir` and returns the matching entry
// (paths relative to `dir`).
ManifestEntry save_rgbd_sample(const RgbdSample& sample, const std::filesystem::path& dir);
std::vector<std::filesystem::path> save_pseudo_labels(const PseudoLabelSet& labels, const std::string& id,
                                                      const std::filesystem::path& dir);

// Label raster (0 = background, distinct ids = instances) -> annotation.
PlaneAnnotation annotation_from_labels(const std::vector<std::uint16_t>& ids, int height, int width,
                                       const std::vector<int>& non_plane_ids);

// ---- preprocessing and augmentation ----------------------------------------

inline constexpr float kDefaultDepthMax = 10.0f;

Raster normalize_depth(const Raster& depth, float d_max);

struct SceneConfig {
    int size = 64;
    int planes_min = 2;
    int planes_max = 8;
    float depth_min = 1.0f;
    float depth_max = 8.0f;
    bool clutter = true;
    int max_retries = 64;

    void validate() const;
};

struct SyntheticScene {
    RgbdSample sample;  // annotation also attached to sample
    PlaneAnnotation annotation;
};

SyntheticScene generate_synthetic_scene(std::uint64_t seed, const SceneConfig& cfg);

// Default small-mask threshold: 0.1% of the image area.
std::int64_t default_min_mask_area(int height, int width);

PseudoLabelSet filter_small_masks(const PseudoLabelSet& labels, std::int64_t min_area);

// Tight half-open box of the foreground; throws InputError on an empty mask.
BoxPrompt tight_box(const BinaryMask& mask);

struct PretrainTarget {
    std::size_t index = 0;
    BinaryMask mask;
    BoxPrompt box;
};

PretrainTarget sample_pretrain_target(const PseudoLabelSet& labels, Rng& rng);

// Displaces each coordinate by U[-f L, f L] (L = side length along that axis)
// and clips to the image. Resamples a collapsed box up to 8 times, then
// returns the input unchanged.
BoxPrompt jitter_box(const BoxPrompt& box, float max_frac, Rng& rng, int image_width, int image_height);

BinaryMask flip_mask(const BinaryMask& mask);
BoxPrompt flip_box(const BoxPrompt& box, int image_width);
// Mirrors rasters, annotation masks and boxes about the vertical axis.
std::pair<RgbdSample, std::vector<BoxPrompt>> horizontal_flip(const RgbdSample& sample,
                                                              const std::vector<BoxPrompt>& boxes);

BinaryMask dilate(const BinaryMask& mask);
BinaryMask erode(const BinaryMask& mask);

// Imperfect pseudo-labels from exact annotations: each mask is repeatedly
// dilated or eroded (coin flip) until its area has changed by `strength`.
PseudoLabelSet corrupt_annotation(const PlaneAnnotation& annotation, float strength, Rng& rng);

}  // namespace planesam
