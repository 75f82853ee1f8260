#include "planesam/pipeline.hpp"

#include <algorithm>

#include "planesam/errors.hpp"
#include "planesam/image_io.hpp"

namespace planesam {

namespace fs = std::filesystem;

namespace {

std::uint64_t scene_seed(std::uint64_t seed, int index) {
    // splitmix64 step so neighbouring run seeds give unrelated scenes
    std::uint64_t z = seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(index) + 1;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

std::string synth_id(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "synth_%04d", index);
    return buf;
}

}  // namespace

std::vector<RgbdSample> load_samples(const fs::path& manifest, bool require_annotation) {
    std::vector<RgbdSample> out;
    for (const auto& e : read_manifest(manifest)) {
        if (require_annotation && !e.label_path) throw DataError("manifest entry " + e.id + " has no label raster");
        out.push_back(load_rgbd_sample(e));
    }
    if (out.empty()) throw DataError("manifest " + manifest.string() + " lists no samples");
    return out;
}

std::vector<PretrainItem> load_pretrain_items(const fs::path& manifest) {
    std::vector<PretrainItem> out;
    for (const auto& e : read_manifest(manifest)) {
        if (e.pseudo_paths.empty()) throw DataError("manifest entry " + e.id + " has no pseudo-labels");
        out.push_back({load_rgbd_sample(e), load_pseudo_labels(e)});
    }
    if (out.empty()) throw DataError("manifest " + manifest.string() + " lists no samples");
    return out;
}

std::vector<RgbdSample> synthetic_dataset(int count, const SceneConfig& scene, std::uint64_t seed) {
    std::vector<RgbdSample> out;
    for (int i = 0; i < count; ++i) {
        auto s = generate_synthetic_scene(scene_seed(seed, i), scene).sample;
        s.id = synth_id(i);
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<PretrainItem> synthetic_pretrain_items(const std::vector<RgbdSample>& samples, float pseudo_corruption,
                                                   std::uint64_t seed) {
    std::vector<PretrainItem> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        if (!s.annotation) throw DataError(s.id + ": pseudo-labels need an annotation to corrupt");
        Rng rng(scene_seed(seed ^ 0x5053454Cull, static_cast<int>(i)));
        auto labels = corrupt_annotation(*s.annotation, pseudo_corruption, rng);
        labels.source = "corrupted-annotation";
        out.push_back({s, std::move(labels)});
    }
    return out;
}

SynthSummary write_synthetic_dataset(const fs::path& dir, int count, const SceneConfig& scene, std::uint64_t seed,
                                     float pseudo_corruption) {
    if (count <= 0) throw ConfigError("synthetic count must be positive");
    scene.validate();
    fs::create_directories(dir);
    auto samples = synthetic_dataset(count, scene, seed);
    auto items = synthetic_pretrain_items(samples, pseudo_corruption, seed);
    SynthSummary summary;
    std::vector<ManifestEntry> entries;
    for (const auto& item : items) {
        const auto& s = item.sample;
        s.annotation->validate(s.height(), s.width());
        auto e = save_rgbd_sample(s, dir);
        e.pseudo_paths = save_pseudo_labels(item.labels, s.id, dir);
        entries.push_back(std::move(e));
        ++summary.images;
        for (bool plane : s.annotation->is_plane) ++(plane ? summary.planes : summary.non_planes);
        summary.pseudo_masks += static_cast<std::int64_t>(item.labels.masks.size());
    }
    write_manifest(dir / "manifest.jsonl", entries);
    return summary;
}

Partition ground_truth_partition(const RgbdSample& sample) {
    if (!sample.annotation) throw DataError(sample.id + " has no ground-truth annotation");
    Partition p;
    p.height = sample.height();
    p.width = sample.width();
    p.labels = sample.annotation->plane_partition();
    if (p.labels.empty()) p.labels.assign(static_cast<std::size_t>(p.height) * p.width, 0);
    return p;
}

ImagePrediction predict_image(const PlaneSamModel& model, const RgbdSample& sample,
                              const std::vector<Detection>& detections) {
    ImagePrediction out;
    out.detections = detections;
    std::vector<BoxPrompt> boxes;
    for (const auto& d : detections) boxes.push_back(d.box);
    out.prompts = predict(model, sample, boxes);
    std::vector<BinaryMask> masks;
    std::vector<float> scores;
    for (std::size_t i = 0; i < out.prompts.size(); ++i) {
        masks.push_back(out.prompts[i].mask);
        scores.push_back(detections[i].score);
    }
    out.partition = partition_from_masks(masks, scores, sample.height(), sample.width());
    return out;
}

DatasetMetrics evaluate_with_detector(const PlaneSamModel& model, const std::vector<RgbdSample>& samples,
                                      const PlaneDetector& detector, float score_thresh, int max_dets) {
    std::vector<EvaluationItem> items;
    for (const auto& s : samples) {
        auto dets = filter_detections(detect_planes(s, &detector), score_thresh, max_dets);
        items.push_back({s.id, predict_image(model, s, dets).partition, ground_truth_partition(s)});
    }
    return evaluate_dataset(items);
}

void write_partition_png(const fs::path& path, const Partition& p) {
    std::vector<std::uint16_t> px(p.labels.size());
    for (std::size_t i = 0; i < px.size(); ++i) {
        if (p.labels[i] < 0 || p.labels[i] > 65535) throw InputError("partition label does not fit 16 bits");
        px[i] = static_cast<std::uint16_t>(p.labels[i]);
    }
    io::write_png(path, p.width, p.height, 1, 16, px);
}

Partition read_partition_png(const fs::path& path) {
    auto img = io::read_png(path);
    if (img.channels != 1) throw FormatError(path.string() + ": partition raster must be single-channel");
    Partition p;
    p.height = img.height;
    p.width = img.width;
    p.labels.assign(img.samples.begin(), img.samples.end());
    return p;
}

}  // namespace planesam
