#include <algorithm>
#include <cmath>
#include <fstream>

#include "doctest.h"
#include "planesam/detector.hpp"
#include "planesam/errors.hpp"
#include "temp_dir.hpp"

using namespace planesam;

namespace {

SyntheticScene scene_with_planes(int n, std::uint64_t seed) {
    SceneConfig cfg;
    cfg.planes_min = n;
    cfg.planes_max = n;
    return generate_synthetic_scene(seed, cfg);
}

}  // namespace

TEST_CASE("noise-free oracle boxes are the tight plane boxes") {
    auto scene = scene_with_planes(4, 1);
    Rng rng(2);
    auto dets = oracle_boxes(scene.annotation, 0.0f, rng, 64, 64);
    REQUIRE(dets.size() == 4);
    auto planes = scene.annotation.plane_indices();
    for (std::size_t i = 0; i < dets.size(); ++i) {
        const auto& mask = scene.annotation.masks[planes[i]];
        // Independent scan for the half-open extent.
        int x0 = 64, y0 = 64, x1 = -1, y1 = -1;
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x)
                if (mask.at(y, x)) x0 = std::min(x0, x), y0 = std::min(y0, y), x1 = std::max(x1, x), y1 = std::max(y1, y);
        CHECK(dets[i].box.x_min == x0);
        CHECK(dets[i].box.y_min == y0);
        CHECK(dets[i].box.x_max == x1 + 1);
        CHECK(dets[i].box.y_max == y1 + 1);
        CHECK(dets[i].score == 1.0f);
        CHECK(dets[i].label == DetectionLabel::plane);
    }
}

TEST_CASE("oracle noise stays within the side-length bound") {
    auto scene = scene_with_planes(3, 3);
    Rng rng(4);
    auto tight = oracle_boxes(scene.annotation, 0.0f, rng, 64, 64);
    for (int draw = 0; draw < 1000; ++draw) {
        auto noisy = oracle_boxes(scene.annotation, 0.1f, rng, 64, 64);
        REQUIRE(noisy.size() == tight.size());
        for (std::size_t i = 0; i < noisy.size(); ++i) {
            const auto& t = tight[i].box;
            const auto& n = noisy[i].box;
            const float w = t.x_max - t.x_min, h = t.y_max - t.y_min;
            CHECK(std::fabs(n.x_min - t.x_min) <= 0.1f * w + 1e-4f);
            CHECK(std::fabs(n.x_max - t.x_max) <= 0.1f * w + 1e-4f);
            CHECK(std::fabs(n.y_min - t.y_min) <= 0.1f * h + 1e-4f);
            CHECK(std::fabs(n.y_max - t.y_max) <= 0.1f * h + 1e-4f);
            CHECK(n.valid_for(64, 64));
        }
    }
}

TEST_CASE("annotation without planes yields no detections") {
    PlaneAnnotation ann;
    BinaryMask m(8, 8);
    m.at(2, 2) = 1;
    ann.masks.push_back(m);
    ann.is_plane.push_back(false);
    Rng rng(5);
    CHECK(oracle_boxes(ann, 0.1f, rng, 8, 8).empty());
}

TEST_CASE("oracle-backed detector matches the oracle and is sorted") {
    auto scene = scene_with_planes(5, 6);
    OracleDetector det(0.0f, 7);
    Rng rng(8);
    auto direct = oracle_boxes(scene.annotation, 0.0f, rng, 64, 64);
    auto via = detect_planes(scene.sample, &det);
    REQUIRE(via.size() == direct.size());
    for (std::size_t i = 0; i < via.size(); ++i) {
        CHECK(via[i].box.x_min == direct[i].box.x_min);
        CHECK(via[i].box.y_max == direct[i].box.y_max);
    }
    CHECK_THROWS_AS(detect_planes(scene.sample, nullptr), ConfigError);

    OracleDetector noisy(0.2f, 9);
    auto a = noisy.detect(scene.sample), b = noisy.detect(scene.sample);
    CHECK(a[0].box.x_min == b[0].box.x_min);
}

TEST_CASE("box-file detector sorts by score and round-trips") {
    planesam::testing::TempDir dir;
    std::map<std::string, std::vector<Detection>> boxes;
    boxes["img"] = {{{0, 0, 10, 10}, 0.2f, DetectionLabel::plane},
                    {{5, 5, 20, 20}, 0.9f, DetectionLabel::plane},
                    {{1, 1, 4, 4}, 0.5f, DetectionLabel::non_plane}};
    boxes["empty"] = {};
    write_box_file(dir / "boxes.jsonl", boxes);
    BoxFileDetector det(dir / "boxes.jsonl");
    RgbdSample s;
    s.id = "img";
    auto dets = detect_planes(s, &det);
    REQUIRE(dets.size() == 3);
    CHECK(dets[0].score == 0.9f);
    CHECK(dets[1].score == 0.5f);
    CHECK(dets[2].score == 0.2f);
    s.id = "empty";
    CHECK(detect_planes(s, &det).empty());
    CHECK(det.has_image("img"));
    CHECK_FALSE(det.has_image("other"));
}

TEST_CASE("malformed box files are rejected") {
    planesam::testing::TempDir dir;
    {
        std::ofstream(dir / "bad.jsonl") << R"({"image_id": "a", "boxes": [[5, 5, 2, 9]]})" << "\n";
    }
    CHECK_THROWS_AS(read_box_file(dir / "bad.jsonl"), FormatError);
    CHECK_THROWS_AS(read_box_file(dir / "missing.jsonl"), LoadError);
}

TEST_CASE("filter_detections") {
    std::vector<Detection> dets{{{0, 0, 4, 4}, 0.9f, DetectionLabel::plane},
                                {{0, 0, 5, 5}, 0.4f, DetectionLabel::plane},
                                {{0, 0, 6, 6}, 0.7f, DetectionLabel::non_plane},
                                {{0, 0, 7, 7}, 0.2f, DetectionLabel::plane}};
    auto all = filter_detections(dets, 0.0f, 10);
    REQUIRE(all.size() == 3);
    CHECK(all[0].box.x_max == 4);
    CHECK(all[1].box.x_max == 5);
    CHECK(all[2].box.x_max == 7);
    CHECK(filter_detections(dets, 1.01f).empty());
    CHECK(filter_detections(dets, 0.5f).size() == 1);
    CHECK(filter_detections(dets, 0.0f, 2).size() == 2);
}

TEST_CASE("detector config and recipe") {
    DetectorConfig cfg;
    CHECK(cfg.max_dets == 30);
    CHECK(cfg.training.lr0 == 0.02);
    CHECK(cfg.training.momentum == 0.9);
    CHECK(cfg.training.weight_decay == 1e-4);
    CHECK(cfg.training.batch_size == 8);
    CHECK(cfg.training.epochs == 10);
    cfg.validate();
    cfg.kind = DetectorKind::external;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = DetectorConfig{};
    cfg.noise_frac = 0.5f;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
