#include "planesam/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>

#include "json.hpp"

#include "planesam/errors.hpp"
#include "planesam/image_io.hpp"

namespace planesam {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- basic types ----------------------------------------------------------

std::int64_t BinaryMask::area() const {
    std::int64_t a = 0;
    for (auto b : bits) a += b;
    return a;
}

std::vector<std::size_t> PlaneAnnotation::plane_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < masks.size(); ++i)
        if (is_plane[i]) out.push_back(i);
    return out;
}

void PlaneAnnotation::validate(int height, int width) const {
    if (masks.size() != is_plane.size()) throw FormatError("annotation: mask/flag count mismatch");
    std::vector<std::uint8_t> used(static_cast<std::size_t>(height) * width, 0);
    for (std::size_t m = 0; m < masks.size(); ++m) {
        const auto& mask = masks[m];
        if (mask.height != height || mask.width != width) throw FormatError("annotation: mask size mismatch");
        if (mask.area() < 1) throw FormatError("annotation: empty mask " + std::to_string(m));
        for (std::size_t i = 0; i < used.size(); ++i) {
            if (mask.bits[i] && used[i]++) throw FormatError("annotation: masks overlap");
        }
    }
}

std::vector<std::int32_t> PlaneAnnotation::plane_partition() const {
    if (masks.empty()) return {};
    std::vector<std::int32_t> labels(masks.front().bits.size(), 0);
    std::int32_t next = 1;
    for (std::size_t m = 0; m < masks.size(); ++m) {
        if (!is_plane[m]) continue;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (masks[m].bits[i]) labels[i] = next;
        ++next;
    }
    return labels;
}

void RgbdSample::validate() const {
    if (rgb.channels != 3) throw FormatError(id + ": rgb must have 3 channels");
    if (depth.channels != 1) throw FormatError(id + ": depth must have 1 channel");
    if (rgb.height != depth.height || rgb.width != depth.width) {
        throw FormatError(id + ": rgb " + std::to_string(rgb.width) + "x" + std::to_string(rgb.height) +
                          " vs depth " + std::to_string(depth.width) + "x" + std::to_string(depth.height));
    }
    for (float d : depth.data) {
        if (!std::isfinite(d) || d < 0.0f) throw FormatError(id + ": depth must be finite and non-negative");
    }
    if (annotation) annotation->validate(rgb.height, rgb.width);
}

bool BoxPrompt::valid_for(int image_width, int image_height) const noexcept {
    if (!(x_min < x_max) || !(y_min < y_max)) return false;
    return x_max > 0.0f && y_max > 0.0f && x_min < static_cast<float>(image_width) &&
           y_min < static_cast<float>(image_height);
}

// ---- manifest and files ---------------------------------------------------

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

std::string required_string(const json& j, const char* key, std::size_t line) {
    if (!j.contains(key) || !j[key].is_string()) {
        throw FormatError("manifest line " + std::to_string(line) + ": missing string field '" + key + "'");
    }
    return j[key].get<std::string>();
}

}  // namespace

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open manifest " + path.string());
    const fs::path base = path.parent_path();
    std::vector<ManifestEntry> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError("manifest line " + std::to_string(lineno) + ": " + e.what());
        }
        ManifestEntry e;
        e.id = required_string(j, "id", lineno);
        e.rgb_path = resolve(base, required_string(j, "rgb_path", lineno));
        e.depth_path = resolve(base, required_string(j, "depth_path", lineno));
        if (j.contains("label_path") && j["label_path"].is_string()) {
            e.label_path = resolve(base, j["label_path"].get<std::string>());
        }
        if (j.contains("non_plane_ids")) e.non_plane_ids = j["non_plane_ids"].get<std::vector<int>>();
        if (j.contains("pseudo_paths")) {
            for (const auto& p : j["pseudo_paths"]) e.pseudo_paths.push_back(resolve(base, p.get<std::string>()));
        }
        out.push_back(std::move(e));
    }
    return out;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
    // Written under a .partial name and renamed once complete.
    const fs::path partial = fs::path(path.string() + ".partial");
    {
        std::ofstream out(partial);
        if (!out) throw LoadError("cannot write manifest " + partial.string());
        const fs::path base = path.parent_path();
        auto rel = [&](const fs::path& p) { return base.empty() ? p.string() : p.lexically_relative(base).string(); };
        for (const auto& e : entries) {
            json j;
            j["id"] = e.id;
            j["rgb_path"] = rel(e.rgb_path);
            j["depth_path"] = rel(e.depth_path);
            if (e.label_path) j["label_path"] = rel(*e.label_path);
            if (!e.non_plane_ids.empty()) j["non_plane_ids"] = e.non_plane_ids;
            if (!e.pseudo_paths.empty()) {
                json arr = json::array();
                for (const auto& p : e.pseudo_paths) arr.push_back(rel(p));
                j["pseudo_paths"] = arr;
            }
            out << j.dump() << '\n';
        }
        if (!out) throw LoadError("short write on manifest " + partial.string());
    }
    fs::rename(partial, path);
}

PlaneAnnotation annotation_from_labels(const std::vector<std::uint16_t>& ids, int height, int width,
                                       const std::vector<int>& non_plane_ids) {
    std::set<int> distinct;
    for (auto v : ids)
        if (v != 0) distinct.insert(v);
    const std::set<int> non_plane(non_plane_ids.begin(), non_plane_ids.end());
    std::map<int, std::size_t> slot;
    PlaneAnnotation ann;
    for (int id : distinct) {
        slot[id] = ann.masks.size();
        ann.masks.emplace_back(height, width);
        ann.is_plane.push_back(!non_plane.count(id));
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] != 0) ann.masks[slot[ids[i]]].bits[i] = 1;
    }
    return ann;
}

RgbdSample load_rgbd_sample(const ManifestEntry& entry) {
    for (const fs::path* p : {&entry.rgb_path, &entry.depth_path}) {
        if (!fs::exists(*p)) throw LoadError(entry.id + ": missing file " + p->string());
    }
    if (entry.label_path && !fs::exists(*entry.label_path)) {
        throw LoadError(entry.id + ": missing file " + entry.label_path->string());
    }
    RgbdSample s;
    s.id = entry.id;

    const auto rgb = io::read_png(entry.rgb_path);
    if (rgb.channels < 3) throw FormatError(entry.id + ": rgb raster must have 3 channels");
    const float rgb_scale = rgb.bit_depth == 16 ? 65535.0f : 255.0f;
    s.rgb = Raster(rgb.height, rgb.width, 3);
    for (std::size_t p = 0; p < static_cast<std::size_t>(rgb.width) * rgb.height; ++p)
        for (int c = 0; c < 3; ++c)
            s.rgb.data[p * 3 + c] = static_cast<float>(rgb.samples[p * rgb.channels + c]) / rgb_scale;

    const auto depth = io::read_png(entry.depth_path);
    if (depth.channels != 1) throw FormatError(entry.id + ": depth raster must be single-channel");
    s.depth = Raster(depth.height, depth.width, 1);
    for (std::size_t i = 0; i < depth.samples.size(); ++i) s.depth.data[i] = static_cast<float>(depth.samples[i]) / 1000.0f;

    if (depth.width != rgb.width || depth.height != rgb.height) {
        throw FormatError(entry.id + ": depth " + std::to_string(depth.width) + "x" + std::to_string(depth.height) +
                          " does not match rgb " + std::to_string(rgb.width) + "x" + std::to_string(rgb.height));
    }
    if (entry.label_path) {
        const auto labels = io::read_png(*entry.label_path);
        if (labels.channels != 1 || labels.width != rgb.width || labels.height != rgb.height) {
            throw FormatError(entry.id + ": label raster shape mismatch");
        }
        s.annotation = annotation_from_labels(labels.samples, labels.height, labels.width, entry.non_plane_ids);
    }
    s.validate();
    return s;
}

PseudoLabelSet load_pseudo_labels(const ManifestEntry& entry) {
    PseudoLabelSet set;
    set.source = "manifest:" + entry.id;
    for (const auto& p : entry.pseudo_paths) {
        const auto img = io::read_png(p);
        if (img.channels != 1) throw FormatError(entry.id + ": pseudo-label raster must be single-channel");
        BinaryMask m(img.height, img.width);
        for (std::size_t i = 0; i < img.samples.size(); ++i) m.bits[i] = img.samples[i] != 0 ? 1 : 0;
        if (m.area() > 0) set.masks.push_back(std::move(m));
    }
    return set;
}

ManifestEntry save_rgbd_sample(const RgbdSample& sample, const fs::path& dir) {
    sample.validate();
    const int W = sample.width();
    const int H = sample.height();
    const std::size_t n = static_cast<std::size_t>(W) * H;
    ManifestEntry e;
    e.id = sample.id;
    e.rgb_path = dir / (sample.id + "_rgb.png");
    e.depth_path = dir / (sample.id + "_depth.png");

    std::vector<std::uint16_t> rgb(n * 3);
    for (std::size_t i = 0; i < rgb.size(); ++i) {
        rgb[i] = static_cast<std::uint16_t>(std::lround(std::clamp(sample.rgb.data[i], 0.0f, 1.0f) * 255.0f));
    }
    io::write_png(e.rgb_path, W, H, 3, 8, rgb);

    std::vector<std::uint16_t> depth(n);
    for (std::size_t i = 0; i < n; ++i) {
        depth[i] = static_cast<std::uint16_t>(std::clamp<long>(std::lround(sample.depth.data[i] * 1000.0f), 0L, 65535L));
    }
    io::write_png(e.depth_path, W, H, 1, 16, depth);

    if (sample.annotation) {
        std::vector<std::uint16_t> ids(n, 0);
        const auto& ann = *sample.annotation;
        for (std::size_t m = 0; m < ann.masks.size(); ++m) {
            for (std::size_t i = 0; i < n; ++i)
                if (ann.masks[m].bits[i]) ids[i] = static_cast<std::uint16_t>(m + 1);
            if (!ann.is_plane[m]) e.non_plane_ids.push_back(static_cast<int>(m + 1));
        }
        e.label_path = dir / (sample.id + "_label.png");
        io::write_png(*e.label_path, W, H, 1, 16, ids);
    }
    return e;
}

std::vector<fs::path> save_pseudo_labels(const PseudoLabelSet& labels, const std::string& id, const fs::path& dir) {
    std::vector<fs::path> paths;
    for (std::size_t k = 0; k < labels.masks.size(); ++k) {
        const auto& m = labels.masks[k];
        std::vector<std::uint16_t> px(m.bits.size());
        for (std::size_t i = 0; i < px.size(); ++i) px[i] = m.bits[i] ? 255 : 0;
        fs::path p = dir / (id + "_pseudo" + std::to_string(k) + ".png");
        io::write_png(p, m.width, m.height, 1, 8, px);
        paths.push_back(p);
    }
    return paths;
}

// ---- preprocessing --------------------------------------------------------

Raster normalize_depth(const Raster& depth, float d_max) {
    if (!(d_max > 0.0f)) throw ConfigError("data.d_max must be positive");
    Raster out = depth;
    for (float& v : out.data) v = std::clamp(v / d_max, 0.0f, 1.0f);
    return out;
}

void SceneConfig::validate() const {
    if (size < 16) throw ConfigError("scene.size must be at least 16");
    if (planes_min < 1 || planes_max < planes_min || planes_max > 16) {
        throw ConfigError("scene plane-count range must satisfy 1 <= min <= max <= 16");
    }
    if (!(depth_min > 0.0f) || !(depth_max > depth_min)) throw ConfigError("scene depth range must satisfy 0 < min < max");
    if (max_retries < 1) throw ConfigError("scene.max_retries must be positive");
}

namespace {

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

std::array<float, 3> hsv_to_rgb(double h, double s, double v) {
    const double hh = std::fmod(h, 1.0) * 6.0;
    const int sector = static_cast<int>(hh);
    const double f = hh - sector;
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    double r = v, g = t, b = p;
    switch (sector) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
    return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

struct PlaneSpec {
    int x0, y0, x1, y1;  // half-open
    double base_depth, gx, gy;
    std::array<float, 3> color;
};

}  // namespace

SyntheticScene generate_synthetic_scene(std::uint64_t seed, const SceneConfig& cfg) {
    cfg.validate();
    Rng rng(seed);
    const int S = cfg.size;
    const std::int64_t min_visible = std::max<std::int64_t>(4, static_cast<std::int64_t>(S) * S / 200);
    const double grad_scale = 64.0 / S;

    for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
        const int n_planes = uniform_int(rng, cfg.planes_min, cfg.planes_max);
        const double hue0 = uniform(rng, 0.0, 1.0);
        std::vector<PlaneSpec> planes;
        for (int i = 0; i < n_planes; ++i) {
            PlaneSpec p{};
            const int w = uniform_int(rng, S / 6, S / 2);
            const int h = uniform_int(rng, S / 6, S / 2);
            p.x0 = uniform_int(rng, 0, S - w);
            p.y0 = uniform_int(rng, 0, S - h);
            p.x1 = p.x0 + w;
            p.y1 = p.y0 + h;
            p.base_depth = uniform(rng, cfg.depth_min + 0.1 * (cfg.depth_max - cfg.depth_min),
                                   cfg.depth_max - 0.1 * (cfg.depth_max - cfg.depth_min));
            p.gx = uniform(rng, -0.03, 0.03) * grad_scale;
            p.gy = uniform(rng, -0.03, 0.03) * grad_scale;
            // Evenly spaced hues keep plane colours distinct.
            p.color = hsv_to_rgb(hue0 + static_cast<double>(i) / n_planes, uniform(rng, 0.55, 0.95),
                                 uniform(rng, 0.55, 0.95));
            planes.push_back(p);
        }
        // Far planes first so nearer ones occlude them.
        std::stable_sort(planes.begin(), planes.end(),
                         [](const PlaneSpec& a, const PlaneSpec& b) { return a.base_depth > b.base_depth; });

        RgbdSample sample;
        sample.id = "synth_" + std::to_string(seed);
        sample.rgb = Raster(S, S, 3);
        sample.depth = Raster(S, S, 1);
        std::vector<int> owner(static_cast<std::size_t>(S) * S, -1);

        // Textured, non-planar background.
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                const float g = static_cast<float>(0.3 + uniform(rng, -0.08, 0.08));
                for (int c = 0; c < 3; ++c) sample.rgb.at(y, x, c) = std::clamp(g + static_cast<float>(uniform(rng, -0.03, 0.03)), 0.0f, 1.0f);
                sample.depth.at(y, x) = static_cast<float>(cfg.depth_max * uniform(rng, 0.92, 1.0));
            }

        for (std::size_t k = 0; k < planes.size(); ++k) {
            const auto& p = planes[k];
            const double cx = 0.5 * (p.x0 + p.x1), cy = 0.5 * (p.y0 + p.y1);
            for (int y = p.y0; y < p.y1; ++y)
                for (int x = p.x0; x < p.x1; ++x) {
                    owner[static_cast<std::size_t>(y) * S + x] = static_cast<int>(k);
                    for (int c = 0; c < 3; ++c) sample.rgb.at(y, x, c) = p.color[static_cast<std::size_t>(c)];
                    const double d = p.base_depth + p.gx * (x - cx) + p.gy * (y - cy);
                    sample.depth.at(y, x) = static_cast<float>(std::clamp(d, static_cast<double>(cfg.depth_min),
                                                                          static_cast<double>(cfg.depth_max)));
                }
        }

        const int clutter_id = static_cast<int>(planes.size());
        if (cfg.clutter) {
            const double ccx = uniform(rng, 0.15 * S, 0.85 * S), ccy = uniform(rng, 0.15 * S, 0.85 * S);
            const double rx = uniform(rng, S / 12.0, S / 6.0), ry = uniform(rng, S / 12.0, S / 6.0);
            const double near = uniform(rng, cfg.depth_min, cfg.depth_min + 0.3 * (cfg.depth_max - cfg.depth_min));
            for (int y = 0; y < S; ++y)
                for (int x = 0; x < S; ++x) {
                    const double u = (x + 0.5 - ccx) / rx, v = (y + 0.5 - ccy) / ry;
                    if (u * u + v * v > 1.0) continue;
                    owner[static_cast<std::size_t>(y) * S + x] = clutter_id;
                    for (int c = 0; c < 3; ++c) sample.rgb.at(y, x, c) = static_cast<float>(uniform(rng, 0.1, 0.9));
                    sample.depth.at(y, x) = static_cast<float>(near + 0.15 * std::sin(0.9 * x) * std::cos(0.7 * y) + 0.2 * (1.0 - u * u - v * v));
                }
        }

        PlaneAnnotation ann;
        bool ok = true;
        for (int k = 0; k <= clutter_id; ++k) {
            if (k == clutter_id && !cfg.clutter) break;
            BinaryMask m(S, S);
            for (std::size_t i = 0; i < owner.size(); ++i) m.bits[i] = owner[i] == k ? 1 : 0;
            const auto area = m.area();
            if (k < clutter_id && area < min_visible) {
                ok = false;
                break;
            }
            if (area == 0) continue;  // clutter fully outside cannot happen, but stay safe
            ann.masks.push_back(std::move(m));
            ann.is_plane.push_back(k < clutter_id);
        }
        if (!ok) continue;
        sample.annotation = ann;
        sample.validate();
        return {std::move(sample), std::move(ann)};
    }
    throw GenerationError("synthetic scene " + std::to_string(seed) + ": no valid layout after " +
                          std::to_string(cfg.max_retries) + " attempts");
}

// ---- pseudo-labels, prompts, augmentation ---------------------------------

std::int64_t default_min_mask_area(int height, int width) {
    return static_cast<std::int64_t>(std::ceil(0.001 * static_cast<double>(height) * width));
}

PseudoLabelSet filter_small_masks(const PseudoLabelSet& labels, std::int64_t min_area) {
    if (min_area < 0) throw InputError("filter_small_masks: min_area must be >= 0");
    PseudoLabelSet out;
    out.source = labels.source;
    for (const auto& m : labels.masks)
        if (m.area() >= min_area) out.masks.push_back(m);
    return out;
}

BoxPrompt tight_box(const BinaryMask& mask) {
    int x0 = mask.width, y0 = mask.height, x1 = -1, y1 = -1;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(y, x)) {
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x);
                y1 = std::max(y1, y);
            }
    if (x1 < 0) throw InputError("tight_box: empty mask");
    return {static_cast<float>(x0), static_cast<float>(y0), static_cast<float>(x1 + 1), static_cast<float>(y1 + 1)};
}

PretrainTarget sample_pretrain_target(const PseudoLabelSet& labels, Rng& rng) {
    if (labels.masks.empty()) throw SamplingError("sample_pretrain_target: empty label set");
    const std::size_t idx = std::uniform_int_distribution<std::size_t>(0, labels.masks.size() - 1)(rng);
    return {idx, labels.masks[idx], tight_box(labels.masks[idx])};
}

BoxPrompt jitter_box(const BoxPrompt& box, float max_frac, Rng& rng, int image_width, int image_height) {
    if (!(max_frac >= 0.0f && max_frac < 0.5f)) throw InputError("jitter_box: max_frac must be in [0, 0.5)");
    if (max_frac == 0.0f) return box;
    const double fw = static_cast<double>(max_frac) * box.width();
    const double fh = static_cast<double>(max_frac) * box.height();
    const auto W = static_cast<double>(image_width);
    const auto H = static_cast<double>(image_height);
    for (int attempt = 0; attempt < 8; ++attempt) {
        const double dx0 = uniform(rng, -fw, fw);
        const double dy0 = uniform(rng, -fh, fh);
        const double dx1 = uniform(rng, -fw, fw);
        const double dy1 = uniform(rng, -fh, fh);
        BoxPrompt out{static_cast<float>(std::clamp(box.x_min + dx0, 0.0, W)),
                      static_cast<float>(std::clamp(box.y_min + dy0, 0.0, H)),
                      static_cast<float>(std::clamp(box.x_max + dx1, 0.0, W)),
                      static_cast<float>(std::clamp(box.y_max + dy1, 0.0, H))};
        if (out.valid_for(image_width, image_height)) return out;
    }
    return box;
}

BinaryMask flip_mask(const BinaryMask& mask) {
    BinaryMask out(mask.height, mask.width);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) out.at(y, mask.width - 1 - x) = mask.at(y, x);
    return out;
}

BoxPrompt flip_box(const BoxPrompt& box, int image_width) {
    const auto W = static_cast<float>(image_width);
    return {W - box.x_max, box.y_min, W - box.x_min, box.y_max};
}

namespace {

Raster flip_raster(const Raster& r) {
    Raster out(r.height, r.width, r.channels);
    for (int y = 0; y < r.height; ++y)
        for (int x = 0; x < r.width; ++x)
            for (int c = 0; c < r.channels; ++c) out.at(y, r.width - 1 - x, c) = r.at(y, x, c);
    return out;
}

}  // namespace

std::pair<RgbdSample, std::vector<BoxPrompt>> horizontal_flip(const RgbdSample& sample,
                                                              const std::vector<BoxPrompt>& boxes) {
    RgbdSample out;
    out.id = sample.id;
    out.rgb = flip_raster(sample.rgb);
    out.depth = flip_raster(sample.depth);
    if (sample.annotation) {
        PlaneAnnotation ann;
        ann.is_plane = sample.annotation->is_plane;
        for (const auto& m : sample.annotation->masks) ann.masks.push_back(flip_mask(m));
        out.annotation = std::move(ann);
    }
    std::vector<BoxPrompt> flipped;
    flipped.reserve(boxes.size());
    for (const auto& b : boxes) flipped.push_back(flip_box(b, sample.width()));
    return {std::move(out), std::move(flipped)};
}

BinaryMask dilate(const BinaryMask& mask) {
    BinaryMask out = mask;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            if (mask.at(y, x)) continue;
            const bool touch = (x > 0 && mask.at(y, x - 1)) || (x + 1 < mask.width && mask.at(y, x + 1)) ||
                               (y > 0 && mask.at(y - 1, x)) || (y + 1 < mask.height && mask.at(y + 1, x));
            if (touch) out.at(y, x) = 1;
        }
    return out;
}

BinaryMask erode(const BinaryMask& mask) {
    BinaryMask out = mask;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(y, x)) continue;
            const bool keep = x > 0 && mask.at(y, x - 1) && x + 1 < mask.width && mask.at(y, x + 1) && y > 0 &&
                              mask.at(y - 1, x) && y + 1 < mask.height && mask.at(y + 1, x);
            if (!keep) out.at(y, x) = 0;
        }
    return out;
}

PseudoLabelSet corrupt_annotation(const PlaneAnnotation& annotation, float strength, Rng& rng) {
    if (strength < 0.0f) throw InputError("corrupt_annotation: strength must be >= 0");
    PseudoLabelSet out;
    out.source = "corrupted-annotation";
    for (const auto& mask : annotation.masks) {
        const bool grow = std::bernoulli_distribution(0.5)(rng);
        const double a0 = static_cast<double>(mask.area());
        BinaryMask cur = mask;
        for (int it = 0; it < 64; ++it) {
            if (std::fabs(static_cast<double>(cur.area()) - a0) >= strength * a0) break;
            BinaryMask next = grow ? dilate(cur) : erode(cur);
            if (next.area() == 0 || next == cur) break;
            cur = std::move(next);
        }
        out.masks.push_back(std::move(cur));
    }
    return out;
}

}  // namespace planesam
