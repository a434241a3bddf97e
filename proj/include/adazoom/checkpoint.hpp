#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "adazoom/geometry.hpp"
#include "adazoom/policy.hpp"

namespace adazoom {

inline nlohmann::json zoom_to_json(const ZoomSpec& zoom) {
    nlohmann::json ranges = nlohmann::json::array();
    for (const ScaleRange& r : zoom.ranges)
        ranges.push_back({{"lo", r.lo}, {"hi", std::isfinite(r.hi) ? nlohmann::json(r.hi)
                                                                   : nlohmann::json(nullptr)}});
    return {{"areas", zoom.areas},
            {"ratios", zoom.ratios},
            {"ranges", std::move(ranges)},
            {"target_short_edge", zoom.target_short_edge}};
}

inline ZoomSpec zoom_from_json(const nlohmann::json& doc) {
    ZoomSpec zoom;
    zoom.areas = doc.value("areas", zoom.areas);
    zoom.ratios = doc.value("ratios", zoom.ratios);
    if (doc.contains("ranges")) {
        zoom.ranges.clear();
        for (const auto& r : doc.at("ranges")) {
            ScaleRange range;
            range.lo = r.at("lo").get<double>();
            range.hi = r.at("hi").is_null() ? unbounded() : r.at("hi").get<double>();
            zoom.ranges.push_back(range);
        }
    }
    zoom.target_short_edge = doc.value("target_short_edge", zoom.target_short_edge);
    zoom.validate();
    return zoom;
}

inline nlohmann::json grid_to_json(GridDims grid) { return {{"h", grid.h}, {"w", grid.w}}; }

inline GridDims grid_from_json(const nlohmann::json& doc) {
    GridDims grid;
    grid.h = doc.value("h", grid.h);
    grid.w = doc.value("w", grid.w);
    if (grid.h < 1 || grid.w < 1) throw std::runtime_error("grid dims must be positive");
    return grid;
}

/// Trained policy plus the geometry it was trained against. Loading rejects
/// dumps whose dimensions disagree with their own parameter blocks.
struct Checkpoint {
    PolicyParams params;
    ZoomSpec zoom;
    GridDims grid;
};

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json checkpoint_to_json(const Checkpoint& ckpt) {
    return {{"version", kCheckpointVersion},
            {"grid", grid_to_json(ckpt.grid)},
            {"zoom", zoom_to_json(ckpt.zoom)},
            {"policy",
             {{"feature_dim", ckpt.params.feature_dim},
              {"n_s", ckpt.params.n_s},
              {"n_r", ckpt.params.n_r},
              {"hidden_width", ckpt.params.hidden_width},
              {"w_hidden", ckpt.params.w_hidden},
              {"theta_f", ckpt.params.theta_f},
              {"theta_s", ckpt.params.theta_s},
              {"theta_r", ckpt.params.theta_r}}}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& doc) {
    if (doc.value("version", -1) != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version");
    Checkpoint ckpt;
    ckpt.grid = grid_from_json(doc.at("grid"));
    ckpt.zoom = zoom_from_json(doc.at("zoom"));
    const auto& p = doc.at("policy");
    ckpt.params.feature_dim = p.at("feature_dim").get<int>();
    ckpt.params.n_s = p.at("n_s").get<int>();
    ckpt.params.n_r = p.at("n_r").get<int>();
    ckpt.params.hidden_width = p.at("hidden_width").get<int>();
    ckpt.params.w_hidden = p.at("w_hidden").get<std::vector<double>>();
    ckpt.params.theta_f = p.at("theta_f").get<std::vector<double>>();
    ckpt.params.theta_s = p.at("theta_s").get<std::vector<double>>();
    ckpt.params.theta_r = p.at("theta_r").get<std::vector<double>>();

    const PolicyParams& pp = ckpt.params;
    const auto expect = [](std::size_t got, std::size_t want, const char* what) {
        if (got != want)
            throw std::runtime_error(std::string("checkpoint: dimension mismatch in ") + what);
    };
    expect(pp.theta_f.size(), static_cast<std::size_t>(pp.embed_dim()), "theta_f");
    expect(pp.theta_s.size(), static_cast<std::size_t>(pp.n_s) * pp.embed_dim(), "theta_s");
    expect(pp.theta_r.size(), static_cast<std::size_t>(pp.n_r) * pp.ratio_input_dim(), "theta_r");
    expect(pp.w_hidden.size(), static_cast<std::size_t>(pp.hidden_width) * pp.feature_dim,
           "w_hidden");
    if (pp.feature_dim != feature_dim())
        throw std::runtime_error("checkpoint: feature_dim does not match this build");
    if (pp.n_s != ckpt.zoom.num_scales() || pp.n_r != ckpt.zoom.num_ratios())
        throw std::runtime_error("checkpoint: head sizes do not match the zoom spec");
    return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out << checkpoint_to_json(ckpt).dump(2) << "\n";
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_checkpoint (" + path + "): " + e.what());
    }
    try {
        return checkpoint_from_json(doc);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_checkpoint (" + path + "): " + e.what());
    }
}

}  // namespace adazoom
