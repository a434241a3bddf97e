#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "adazoom/geometry.hpp"
#include "adazoom/rng.hpp"

namespace adazoom {

/// One annotated ground-truth object. Boxes are clipped to the image at load
/// time, so w > 0 and h > 0 hold for every stored annotation.
struct ObjectAnnotation {
    Box box;
    int category = 0;
    int id = 0;

    bool operator==(const ObjectAnnotation&) const = default;
};

/// Object scale s = sqrt(w*h), the geometric-mean side length in pixels.
inline double object_scale(const ObjectAnnotation& obj) {
    return std::sqrt(obj.box.w * obj.box.h);
}

/// Object weight w = 1/s. Smaller objects pull harder on the reward; the
/// proportionality constant cancels in the reward ratio, so it is fixed to 1.
inline double object_weight(const ObjectAnnotation& obj) { return 1.0 / object_scale(obj); }

struct Scene {
    double width = 0;
    double height = 0;
    std::vector<ObjectAnnotation> objects;
    std::string source_id;

    void validate() const {
        if (width < 64 || height < 64)
            throw std::invalid_argument("Scene: image must be at least 64x64 pixels");
    }
};

namespace detail {

/// Clips and appends an object; drops boxes with no area left inside the image.
inline bool push_clipped(Scene& scene, Box box, int category, int* skipped) {
    const Box clipped = box.clipped_to(scene.width, scene.height);
    if (clipped.w <= 0.0 || clipped.h <= 0.0) {
        if (skipped) ++*skipped;
        return false;
    }
    scene.objects.push_back({clipped, category, static_cast<int>(scene.objects.size())});
    return true;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// VisDrone annotation format
// ---------------------------------------------------------------------------

/// Parses a VisDrone-style annotation file:
///   left,top,width,height,score,category,truncation,occlusion
/// Categories 0 ("ignored regions") and 11 ("others") are dropped, matching
/// the dataset's evaluation toolkit. Boxes are clipped to the image; boxes
/// with no area after clipping are skipped and counted in *skipped.
inline Scene load_visdrone(const std::string& path, double width, double height,
                           int* skipped = nullptr) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_visdrone: cannot open " + path);

    Scene scene;
    scene.width = width;
    scene.height = height;
    scene.source_id = path;
    scene.validate();
    if (skipped) *skipped = 0;

    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        std::istringstream ls(line);
        double fields[8];
        for (int f = 0; f < 8; ++f) {
            std::string cell;
            if (!std::getline(ls, cell, ',') || cell.empty() ||
                cell.find_first_not_of("-+.0123456789eE \r") != std::string::npos) {
                throw std::runtime_error("load_visdrone: malformed line " +
                                         std::to_string(line_no) + " in " + path);
            }
            try {
                fields[f] = std::stod(cell);
            } catch (const std::exception&) {
                throw std::runtime_error("load_visdrone: malformed line " +
                                         std::to_string(line_no) + " in " + path);
            }
        }
        const int category = static_cast<int>(fields[5]);
        if (category == 0 || category == 11) continue;
        detail::push_clipped(scene, {fields[0], fields[1], fields[2], fields[3]}, category,
                             skipped);
    }
    return scene;
}

// ---------------------------------------------------------------------------
// Scene JSON schema: {"width": W, "height": H, "objects": [{x,y,w,h,category}]}
// ---------------------------------------------------------------------------

inline Scene scene_from_json(const nlohmann::json& doc, const std::string& source_id) {
    if (!doc.is_object() || !doc.contains("width") || !doc.contains("height") ||
        !doc.contains("objects"))
        throw std::runtime_error("scene json: expected object with width, height, objects");
    Scene scene;
    try {
        scene.width = doc.at("width").get<double>();
        scene.height = doc.at("height").get<double>();
        scene.source_id = source_id;
        scene.validate();
        for (const auto& o : doc.at("objects")) {
            detail::push_clipped(
                scene,
                {o.at("x").get<double>(), o.at("y").get<double>(), o.at("w").get<double>(),
                 o.at("h").get<double>()},
                o.at("category").get<int>(), nullptr);
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("scene json (" + source_id + "): " + e.what());
    }
    return scene;
}

inline nlohmann::json scene_to_json(const Scene& scene) {
    nlohmann::json objects = nlohmann::json::array();
    for (const ObjectAnnotation& o : scene.objects) {
        objects.push_back({{"x", o.box.x},
                           {"y", o.box.y},
                           {"w", o.box.w},
                           {"h", o.box.h},
                           {"category", o.category}});
    }
    return {{"width", scene.width}, {"height", scene.height}, {"objects", std::move(objects)}};
}

inline Scene load_scene_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_scene_json: cannot open " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_scene_json (" + path + "): " + e.what());
    }
    return scene_from_json(doc, std::filesystem::path(path).stem().string());
}

inline void emit_scene_json(const Scene& scene, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("emit_scene_json: cannot open " + path);
    out << scene_to_json(scene).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

struct SideRange {
    double lo = 0;
    double hi = 0;
};

/// Desk-scale stand-in for UAV imagery: clusters of small objects with a few
/// scattered large ones. Non-overlap is not enforced.
struct SynthSceneConfig {
    double width = 1024;
    double height = 1024;
    int clusters = 3;
    int objects_per_cluster = 12;
    SideRange small_side = {8, 24};
    SideRange medium_side = {32, 64};
    SideRange large_side = {100, 200};
    double medium_fraction = 0.0;        // share of cluster members from the medium range
    double large_scatter_fraction = 0.1; // scattered large objects per cluster member
    double cluster_spread = 48;          // gaussian offset sigma, px
    std::uint64_t seed = 0;

    void validate() const {
        if (width < 64 || height < 64)
            throw std::invalid_argument("SynthSceneConfig: image must be at least 64x64");
        if (clusters < 0 || objects_per_cluster < 0)
            throw std::invalid_argument("SynthSceneConfig: negative counts");
        for (const SideRange& r : {small_side, medium_side, large_side})
            if (!(r.lo > 0) || r.hi < r.lo)
                throw std::invalid_argument("SynthSceneConfig: bad side range");
        if (medium_fraction < 0 || medium_fraction > 1 || large_scatter_fraction < 0 ||
            large_scatter_fraction > 1)
            throw std::invalid_argument("SynthSceneConfig: fractions must lie in [0,1]");
        if (!(cluster_spread >= 0))
            throw std::invalid_argument("SynthSceneConfig: negative cluster spread");
    }
};

/// Pure function of the config (including seed). Cluster centers are uniform
/// in the image, members get gaussian offsets, sides come from the configured
/// ranges with a mild aspect jitter, and large objects scatter uniformly.
inline Scene synth_scene(const SynthSceneConfig& cfg) {
    cfg.validate();
    Rng rng(mix_seed(cfg.seed, hash_tag("synth_scene")));

    Scene scene;
    scene.width = cfg.width;
    scene.height = cfg.height;
    scene.source_id = "synth-" + std::to_string(cfg.seed);

    auto place = [&](double cx, double cy, double side, int category) {
        const double aspect = rng.uniform(0.75, 1.3333333333333333);
        const double w = side * std::sqrt(aspect);
        const double h = side / std::sqrt(aspect);
        detail::push_clipped(scene, {cx - 0.5 * w, cy - 0.5 * h, w, h}, category, nullptr);
    };

    for (int c = 0; c < cfg.clusters; ++c) {
        const double cx = rng.uniform(0.0, cfg.width);
        const double cy = rng.uniform(0.0, cfg.height);
        for (int k = 0; k < cfg.objects_per_cluster; ++k) {
            const double ox = rng.normal(cx, cfg.cluster_spread);
            const double oy = rng.normal(cy, cfg.cluster_spread);
            const bool medium = rng.uniform() < cfg.medium_fraction;
            const SideRange& range = medium ? cfg.medium_side : cfg.small_side;
            place(ox, oy, rng.uniform(range.lo, range.hi), medium ? 2 : 1);
        }
    }

    const int total_cluster_objects = cfg.clusters * cfg.objects_per_cluster;
    const int num_large =
        static_cast<int>(std::lround(cfg.large_scatter_fraction * total_cluster_objects));
    for (int k = 0; k < num_large; ++k) {
        place(rng.uniform(0.0, cfg.width), rng.uniform(0.0, cfg.height),
              rng.uniform(cfg.large_side.lo, cfg.large_side.hi), 3);
    }
    return scene;
}

}  // namespace adazoom
