#include "planesam/detector.hpp"

#include <algorithm>
#include <fstream>

#include "json.hpp"
#include "planesam/errors.hpp"

namespace planesam {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::vector<Detection> oracle_boxes(const PlaneAnnotation& annotation, float noise_frac, Rng& rng, int image_width,
                                    int image_height) {
    if (!(noise_frac >= 0.0f && noise_frac < 0.5f)) throw InputError("oracle noise fraction must be in [0, 0.5)");
    std::vector<Detection> out;
    for (std::size_t idx : annotation.plane_indices()) {
        const BoxPrompt tight = tight_box(annotation.masks[idx]);
        out.push_back({jitter_box(tight, noise_frac, rng, image_width, image_height), 1.0f, DetectionLabel::plane});
    }
    return out;
}

OracleDetector::OracleDetector(float noise_frac, std::uint64_t seed) : noise_frac_(noise_frac), seed_(seed) {
    if (!(noise_frac >= 0.0f && noise_frac < 0.5f)) throw ConfigError("detector.noise_frac must be in [0, 0.5)");
}

std::vector<Detection> OracleDetector::detect(const RgbdSample& sample) const {
    if (!sample.annotation) throw DataError("oracle detector needs an annotation for " + sample.id);
    std::uint64_t h = 1469598103934665603ull ^ seed_;
    for (unsigned char c : sample.id) h = (h ^ c) * 1099511628211ull;
    Rng rng(h);
    return oracle_boxes(*sample.annotation, noise_frac_, rng, sample.rgb.width, sample.rgb.height);
}

std::map<std::string, std::vector<Detection>> read_box_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open box file " + path.string());
    std::map<std::string, std::vector<Detection>> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = "box file line " + std::to_string(lineno);
        try {
            auto j = json::parse(line);
            const auto id = j.at("image_id").get<std::string>();
            const auto boxes = j.at("boxes").get<std::vector<std::vector<float>>>();
            std::vector<float> scores(boxes.size(), 1.0f);
            if (j.contains("scores")) scores = j["scores"].get<std::vector<float>>();
            if (scores.size() != boxes.size()) throw FormatError(where + ": scores and boxes differ in length");
            std::vector<std::string> labels(boxes.size(), "plane");
            if (j.contains("labels")) labels = j["labels"].get<std::vector<std::string>>();
            if (labels.size() != boxes.size()) throw FormatError(where + ": labels and boxes differ in length");
            auto& dets = out[id];
            for (std::size_t i = 0; i < boxes.size(); ++i) {
                if (boxes[i].size() != 4) throw FormatError(where + ": a box needs four coordinates");
                BoxPrompt b{boxes[i][0], boxes[i][1], boxes[i][2], boxes[i][3]};
                if (!(b.x_min < b.x_max && b.y_min < b.y_max)) throw FormatError(where + ": degenerate box");
                if (!(scores[i] >= 0.0f && scores[i] <= 1.0f)) throw FormatError(where + ": score outside [0, 1]");
                if (labels[i] != "plane" && labels[i] != "non_plane") throw FormatError(where + ": unknown label");
                dets.push_back({b, scores[i], labels[i] == "plane" ? DetectionLabel::plane : DetectionLabel::non_plane});
            }
        } catch (const json::exception& e) {
            throw FormatError(where + ": " + e.what());
        }
    }
    return out;
}

void write_box_file(const fs::path& path, const std::map<std::string, std::vector<Detection>>& boxes) {
    std::ofstream out(path);
    if (!out) throw LoadError("cannot write box file " + path.string());
    for (const auto& [id, dets] : boxes) {
        json j;
        j["image_id"] = id;
        json b = json::array(), s = json::array(), l = json::array();
        for (const auto& d : dets) {
            b.push_back({d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max});
            s.push_back(d.score);
            l.push_back(d.label == DetectionLabel::plane ? "plane" : "non_plane");
        }
        j["boxes"] = b;
        j["scores"] = s;
        j["labels"] = l;
        out << j.dump() << '\n';
    }
    if (!out) throw LoadError("short write on box file " + path.string());
}

BoxFileDetector::BoxFileDetector(const fs::path& path) : boxes_(read_box_file(path)) {}

std::vector<Detection> BoxFileDetector::detect(const RgbdSample& sample) const {
    auto it = boxes_.find(sample.id);
    if (it == boxes_.end()) throw DataError("no boxes for image " + sample.id);
    return it->second;
}

std::vector<Detection> detect_planes(const RgbdSample& sample, const PlaneDetector* model) {
    if (!model) throw ConfigError("no detector model loaded");
    auto dets = model->detect(sample);
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
    return dets;
}

std::vector<Detection> filter_detections(const std::vector<Detection>& dets, float score_thresh, int max_dets) {
    std::vector<Detection> out;
    for (const auto& d : dets) {
        if (static_cast<int>(out.size()) >= max_dets) break;
        if (d.label == DetectionLabel::plane && d.score >= score_thresh) out.push_back(d);
    }
    return out;
}

void DetectorConfig::validate() const {
    if (!(noise_frac >= 0.0f && noise_frac < 0.5f)) throw ConfigError("detector.noise_frac must be in [0, 0.5)");
    if (!(score_thresh >= 0.0f && score_thresh <= 1.0f)) throw ConfigError("detector.score_thresh must be in [0, 1]");
    if (max_dets <= 0) throw ConfigError("detector.max_dets must be positive");
    if (kind == DetectorKind::external && !weights_path) {
        throw ConfigError("detector.weights_path is required for an external detector");
    }
}

}  // namespace planesam
