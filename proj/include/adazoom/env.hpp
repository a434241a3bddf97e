#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "adazoom/geometry.hpp"
#include "adazoom/scene.hpp"

namespace adazoom {

/// Number of coarse feature channels in the state grid.
inline constexpr int kStateChannels = 6;

/// MDP state: coarse feature grid F (channel-major), binary history map H,
/// and the set of object ids already enclosed by previous regions.
struct State {
    GridDims grid;
    int channels = kStateChannels;
    std::vector<double> F;         // channels * h * w
    std::vector<std::uint8_t> H;   // h * w
    std::unordered_set<int> covered;
    int t = 0;

    double f(int c, int i, int j) const { return F[(c * grid.h + i) * grid.w + j]; }
    double& f(int c, int i, int j) { return F[(c * grid.h + i) * grid.w + j]; }
    std::uint8_t h_at(int i, int j) const { return H[i * grid.w + j]; }
};

struct RewardConfig {
    double beta = 1.5;    // decay rate for out-of-range scales
    double kappa = 0.1;   // feature suppression inside generated regions
    double rho = 1.0;     // containment fraction counted as "enclosed"

    void validate() const {
        if (!(beta > 0)) throw std::invalid_argument("RewardConfig: beta must be positive");
        if (kappa < 0 || kappa >= 1)
            throw std::invalid_argument("RewardConfig: kappa must lie in [0,1)");
        if (rho < 0 || rho > 1) throw std::invalid_argument("RewardConfig: rho must lie in [0,1]");
    }
};

/// Builds S_0. H_0 is all zero. F_0 is rasterized from annotations: per cell,
/// (c0) object-center count, (c1) summed object weight, (c2) mean log scale,
/// (c3..c5) counts per desired scale range. Each channel is then normalized
/// to [0,1] by its max over the grid (an all-zero channel stays zero).
inline State init_state(const Scene& scene, GridDims grid, const ZoomSpec& zoom) {
    State s;
    s.grid = grid;
    s.F.assign(static_cast<std::size_t>(kStateChannels) * grid.cells(), 0.0);
    s.H.assign(static_cast<std::size_t>(grid.cells()), 0);

    const double cell_w = scene.width / grid.w;
    const double cell_h = scene.height / grid.h;

    std::vector<double> log_sum(static_cast<std::size_t>(grid.cells()), 0.0);
    for (const ObjectAnnotation& obj : scene.objects) {
        const int i = std::clamp(static_cast<int>(obj.box.cy() / cell_h), 0, grid.h - 1);
        const int j = std::clamp(static_cast<int>(obj.box.cx() / cell_w), 0, grid.w - 1);
        const double scale = object_scale(obj);
        s.f(0, i, j) += 1.0;
        s.f(1, i, j) += object_weight(obj);
        log_sum[static_cast<std::size_t>(i) * grid.w + j] += std::log(std::max(scale, 1.0));
        for (int k = 0; k < zoom.num_scales() && k < 3; ++k)
            if (zoom.ranges[static_cast<std::size_t>(k)].contains(scale)) s.f(3 + k, i, j) += 1.0;
    }
    for (int i = 0; i < grid.h; ++i)
        for (int j = 0; j < grid.w; ++j) {
            const double count = s.f(0, i, j);
            if (count > 0) s.f(2, i, j) = log_sum[static_cast<std::size_t>(i) * grid.w + j] / count;
        }

    for (int c = 0; c < kStateChannels; ++c) {
        double max_val = 0.0;
        for (int i = 0; i < grid.h; ++i)
            for (int j = 0; j < grid.w; ++j) max_val = std::max(max_val, s.f(c, i, j));
        if (max_val > 0)
            for (int i = 0; i < grid.h; ++i)
                for (int j = 0; j < grid.w; ++j) s.f(c, i, j) /= max_val;
    }
    return s;
}

/// Scale-match decay I(a_s) for an object of scale s against the desired
/// range of scale candidate `scale_index`: 1 inside the range, otherwise
/// max(0, 2 - e^(beta*ds)) where ds is the relative violation of the nearer
/// bound. The top range is unbounded above, so only its lower bound applies.
inline double scale_match(double s, int scale_index, const ZoomSpec& zoom,
                          const RewardConfig& cfg) {
    const ScaleRange& range = zoom.ranges.at(static_cast<std::size_t>(scale_index));
    if (range.contains(s)) return 1.0;
    const double bound = (s < range.lo) ? range.lo : range.hi;
    if (!(bound > 0) || !std::isfinite(bound)) return 1.0;  // unreachable violation
    const double ds = std::abs(s - bound) / bound;
    return std::max(0.0, 2.0 - std::exp(cfg.beta * ds));
}

struct RewardResult {
    double r = 0;
    std::vector<int> newly_covered;  // ids of enclosed, previously uncovered objects
    bool exhausted = false;          // no uncovered weight mass remained
};

/// Weighted-recall reward of one region: the scale-matched weight of newly
/// enclosed objects over the total weight still uncovered before this step.
/// `weight_override` (aligned with scene.objects) replaces 1/s when present,
/// which is how collaborative training injects w = 1 - c.
inline RewardResult reward(const Scene& scene, const State& state, const Region& region,
                           int scale_index, const ZoomSpec& zoom, const RewardConfig& cfg,
                           std::span<const double> weight_override = {}) {
    if (!weight_override.empty() && weight_override.size() != scene.objects.size())
        throw std::invalid_argument("reward: weight override size mismatch");

    RewardResult out;
    double numerator = 0.0;
    double denominator = 0.0;
    for (std::size_t idx = 0; idx < scene.objects.size(); ++idx) {
        const ObjectAnnotation& obj = scene.objects[idx];
        if (state.covered.count(obj.id)) continue;
        const double w = weight_override.empty() ? object_weight(obj) : weight_override[idx];
        denominator += w;
        if (containment_fraction(obj.box, region.box) >= cfg.rho - 1e-12) {
            out.newly_covered.push_back(obj.id);
            numerator += scale_match(object_scale(obj), scale_index, zoom, cfg) * w;
        }
    }
    if (denominator <= 0.0) {
        out.exhausted = true;
        return out;
    }
    out.r = numerator / denominator;
    return out;
}

/// H update: cells touched by the region footprint are set to 1.
inline void update_history(State& state, const GridRect& z) {
    for (int i = z.i0; i <= z.i1; ++i)
        for (int j = z.j0; j <= z.j1; ++j) state.H[i * state.grid.w + j] = 1;
}

/// F update: responses inside the footprint decay by kappa.
inline void update_feature(State& state, const GridRect& z, double kappa) {
    for (int c = 0; c < state.channels; ++c)
        for (int i = z.i0; i <= z.i1; ++i)
            for (int j = z.j0; j <= z.j1; ++j) state.f(c, i, j) *= kappa;
}

/// Everything the rollout needs besides the scene and the policy.
struct EnvConfig {
    GridDims grid;
    ZoomSpec zoom;
    RewardConfig reward;
};

}  // namespace adazoom
