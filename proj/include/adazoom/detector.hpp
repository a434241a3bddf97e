#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <vector>

#include "adazoom/geometry.hpp"
#include "adazoom/parallel.hpp"
#include "adazoom/rollout.hpp"
#include "adazoom/rng.hpp"
#include "adazoom/scene.hpp"
#include "adazoom/training.hpp"

namespace adazoom {

inline constexpr int kSkillBins = 8;

/// Parametric detection oracle standing in for a trained CNN detector.
/// Detection confidence is a logistic in the object's effective (zoomed)
/// side length, so zooming measurably helps small objects. Per-bin skill
/// offsets shift the logistic midpoint and model finetuning progress.
struct DetectorConfig {
    double mu = 24.0;       // effective side length at confidence 0.5
    double tau = 6.0;       // logistic steepness, px
    double jitter = 0.05;   // localization noise, sigma = jitter * s / m
    double fp_rate = 0.5;   // false positives per megapixel of resized input
    double min_confidence = 0.05;  // output score threshold; below is a false negative
    std::array<double, kSkillBins> skill_offset{};  // added to mu, per scale bin
    std::uint64_t seed = 0;

    void validate() const {
        if (!(tau > 0)) throw std::invalid_argument("DetectorConfig: tau must be positive");
        if (fp_rate < 0) throw std::invalid_argument("DetectorConfig: negative fp rate");
        if (jitter < 0) throw std::invalid_argument("DetectorConfig: negative jitter");
        if (min_confidence < 0 || min_confidence >= 1)
            throw std::invalid_argument("DetectorConfig: min_confidence must lie in [0,1)");
    }
};

/// Log-spaced effective-scale bin edges: 4, 8, ..., 1024. Values outside are
/// clamped into the first / last bin.
inline int skill_bin(double s_eff) {
    double edge = 8.0;
    for (int b = 0; b < kSkillBins - 1; ++b, edge *= 2.0)
        if (s_eff < edge) return b;
    return kSkillBins - 1;
}

/// Magnification applied to a region when its short edge is resized to the
/// target. Clamped at 1: the simulator never shrinks below native resolution.
inline double magnification(const Box& region, const ZoomSpec& zoom) {
    const double short_edge = region.short_edge();
    if (!(short_edge > 0)) return 1.0;
    return std::max(1.0, zoom.target_short_edge / short_edge);
}

/// True when the resize would have shrunk the crop and the clamp held it at
/// native resolution instead.
inline bool magnification_clamped(const Box& region, const ZoomSpec& zoom) {
    return region.short_edge() > zoom.target_short_edge;
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Detection confidence of an object with native scale s seen at
/// magnification m.
inline double detect_confidence(double s, double m, const DetectorConfig& det) {
    const double s_eff = s * m;
    const double midpoint = det.mu + det.skill_offset[static_cast<std::size_t>(skill_bin(s_eff))];
    return logistic((s_eff - midpoint) / det.tau);
}

/// Runs the simulated detector on one region crop. A GT object whose center
/// lies in the region yields a detection with logistic confidence in its
/// effective scale and a jittered box (noise shrinks with magnification, the
/// way a localization error in resized space maps back). Confidences below
/// the output threshold are dropped, which is what makes an object a false
/// negative. False positives arrive as a Poisson count per resized
/// megapixel. Detections are in image coordinates, clipped to the region.
inline std::vector<Detection> simulate_detect(const Scene& scene, const Region& region,
                                              const ZoomSpec& zoom, const DetectorConfig& det,
                                              Rng& rng, int id_offset = 0) {
    const double m = magnification(region.box, zoom);
    std::vector<Detection> dets;

    for (const ObjectAnnotation& obj : scene.objects) {
        if (!region.box.contains_point(obj.box.cx(), obj.box.cy())) continue;
        const double s = object_scale(obj);
        const double confidence = detect_confidence(s, m, det);
        if (confidence < det.min_confidence) continue;
        const double sigma = det.jitter * s / m;
        Box box{obj.box.x + rng.normal(0.0, sigma), obj.box.y + rng.normal(0.0, sigma),
                std::max(1.0, obj.box.w + rng.normal(0.0, sigma)),
                std::max(1.0, obj.box.h + rng.normal(0.0, sigma))};
        // Clip to the crop the detector actually saw.
        const double bx2 = std::min(box.x2(), region.box.x2());
        const double by2 = std::min(box.y2(), region.box.y2());
        box.x = std::max(box.x, region.box.x);
        box.y = std::max(box.y, region.box.y);
        box.w = std::max(1e-6, bx2 - box.x);
        box.h = std::max(1e-6, by2 - box.y);

        Detection d;
        d.box = box;
        d.confidence = confidence;
        d.category = obj.category;
        d.id = id_offset + static_cast<int>(dets.size());
        dets.push_back(d);
    }

    // Background clutter proportional to the pixels the detector processed.
    std::vector<int> categories;
    for (const ObjectAnnotation& obj : scene.objects) categories.push_back(obj.category);
    std::sort(categories.begin(), categories.end());
    categories.erase(std::unique(categories.begin(), categories.end()), categories.end());

    const double resized_mp = region.box.w * m * region.box.h * m / 1e6;
    const int num_fp = rng.poisson(det.fp_rate * resized_mp);
    for (int f = 0; f < num_fp; ++f) {
        const double w = rng.uniform(8.0, 64.0) / m;
        const double h = rng.uniform(8.0, 64.0) / m;
        const double x = region.box.x + rng.uniform() * std::max(0.0, region.box.w - w);
        const double y = region.box.y + rng.uniform() * std::max(0.0, region.box.h - h);
        Detection d;
        d.box = Box{x, y, std::min(w, region.box.w), std::min(h, region.box.h)};
        d.confidence = rng.uniform(det.min_confidence, std::max(0.5, det.min_confidence + 0.05));
        d.category = categories.empty()
                         ? 0
                         : categories[rng.uniform_int(categories.size())];
        d.id = id_offset + static_cast<int>(dets.size());
        dets.push_back(d);
    }
    return dets;
}

/// One crop's pass through the simulated detector.
struct ZoomedInference {
    Region region;
    double magnification = 1.0;
    bool clamped = false;  // the pass ran at native resolution
    std::vector<Detection> detections;  // image coordinates
};

inline ZoomedInference zoomed_inference(const Scene& scene, const Region& region,
                                        const ZoomSpec& zoom, const DetectorConfig& det,
                                        Rng& rng, int id_offset = 0) {
    ZoomedInference out;
    out.region = region;
    out.magnification = magnification(region.box, zoom);
    out.clamped = magnification_clamped(region.box, zoom);
    out.detections = simulate_detect(scene, region, zoom, det, rng, id_offset);
    return out;
}

namespace detail {

inline std::uint64_t region_stream_key(const Region& region) {
    auto bits = [](double v) {
        std::uint64_t u;
        static_assert(sizeof u == sizeof v);
        std::memcpy(&u, &v, sizeof u);
        return u;
    };
    std::uint64_t k = mix64(bits(region.box.x));
    k = mix_seed(k, bits(region.box.y), bits(region.box.w), bits(region.box.h));
    return mix_seed(k, static_cast<std::uint64_t>(region.scale_index + 1),
                    static_cast<std::uint64_t>(region.ratio_index + 1));
}

}  // namespace detail

/// Whole-image pass plus one pass per focus region, merged by category-wise
/// NMS at IoU 0.5. Each pass draws from its own RNG stream keyed on the
/// region content, so region order does not perturb other regions' noise and
/// duplicate regions produce identical detections (which NMS then removes).
inline std::vector<Detection> full_pipeline(const Scene& scene,
                                            const std::vector<Region>& regions,
                                            const ZoomSpec& zoom, const DetectorConfig& det,
                                            std::uint64_t stream_seed,
                                            double nms_iou = 0.5) {
    const Region whole{{0.0, 0.0, scene.width, scene.height}, -1, -1};
    Rng image_rng(mix_seed(stream_seed, hash_tag("image-pass")));
    std::vector<Detection> merged =
        zoomed_inference(scene, whole, zoom, det, image_rng, 0).detections;

    for (const Region& region : regions) {
        Rng region_rng(mix_seed(stream_seed, hash_tag("region-pass"),
                                detail::region_stream_key(region)));
        const ZoomedInference pass = zoomed_inference(scene, region, zoom, det, region_rng,
                                                      static_cast<int>(merged.size()));
        merged.insert(merged.end(), pass.detections.begin(), pass.detections.end());
    }
    return nms(std::move(merged), nms_iou);
}

/// Per-object best confidence c_i from a merged detection set: detections are
/// matched greedily in descending confidence, each GT at most once, requiring
/// IoU >= iou_threshold and the same category. Unmatched objects get 0.
inline std::vector<double> match_detections(const Scene& scene,
                                            const std::vector<Detection>& dets,
                                            double iou_threshold = 0.5) {
    std::vector<const Detection*> order;
    order.reserve(dets.size());
    for (const Detection& d : dets) order.push_back(&d);
    std::sort(order.begin(), order.end(), [](const Detection* a, const Detection* b) {
        if (a->confidence != b->confidence) return a->confidence > b->confidence;
        return a->id < b->id;
    });

    std::vector<double> confidence(scene.objects.size(), 0.0);
    std::vector<bool> taken(scene.objects.size(), false);
    for (const Detection* d : order) {
        int best = -1;
        double best_iou = -1.0;
        for (std::size_t g = 0; g < scene.objects.size(); ++g) {
            if (taken[g] || scene.objects[g].category != d->category) continue;
            const double v = iou(scene.objects[g].box, d->box);
            if (v >= iou_threshold && v > best_iou) {
                best = static_cast<int>(g);
                best_iou = v;
            }
        }
        if (best >= 0) {
            taken[static_cast<std::size_t>(best)] = true;
            confidence[static_cast<std::size_t>(best)] = d->confidence;
        }
    }
    return confidence;
}

/// Collaborative-training reweighting: w_i = 1 - c_i, so undetected and
/// low-confidence objects pull the policy toward the regions the detector
/// finds difficult.
inline std::vector<double> collaborative_reweight(std::span<const double> confidences) {
    std::vector<double> weights(confidences.size());
    for (std::size_t i = 0; i < confidences.size(); ++i)
        weights[i] = std::clamp(1.0 - confidences[i], 0.0, 1.0);
    return weights;
}

/// Simulated detector finetuning: skill offsets drop (confidence rises) in
/// the effective-scale bins the policy's regions actually exposed, floored at
/// -mu/2 so the simulator stays sane.
inline DetectorConfig detector_finetune(const DetectorConfig& det,
                                        const std::array<double, kSkillBins>& exposure,
                                        double eta) {
    if (!(eta > 0)) throw std::invalid_argument("detector_finetune: eta must be positive");
    double total = 0;
    for (double e : exposure) total += e;
    DetectorConfig out = det;
    if (total <= 0) return out;
    for (int b = 0; b < kSkillBins; ++b)
        out.skill_offset[b] =
            std::max(out.skill_offset[b] - eta * exposure[b] / total, -det.mu / 2.0);
    return out;
}

struct CtConfig {
    int policy_iters = 300;
    double policy_lr = 1e-2;
    int batch = 16;
    int k = 7;            // regions per scene at inference / exposure time
    double finetune_eta = 8.0;
    double eps_start = 0.25;     // guidance toward the reweighted objects
    double eps_end = 0.0;
    bool include_guided = false; // count guided steps in the finetune gradient
    int jobs = 1;
    std::uint64_t seed = 0;
};

struct CtResult {
    PolicyParams policy;
    DetectorConfig detector;
    std::vector<std::vector<double>> confidences;  // per scene, per object (pre-round)
    std::array<double, kSkillBins> exposure{};
};

/// One collaborative round: detect with the current policy's regions, turn
/// confidences into weights w = 1 - c, finetune the policy against them, then
/// finetune the detector on the scale bins the new greedy regions expose.
inline CtResult collaborative_round(const PolicyParams& policy, const DetectorConfig& det,
                                    const std::vector<Scene>& scenes, const CtConfig& ct,
                                    const EnvConfig& env) {
    det.validate();
    CtResult result;
    result.confidences.resize(scenes.size());

    std::vector<std::vector<double>> weights(scenes.size());
    parallel_for(scenes.size(), ct.jobs, [&](std::size_t s) {
        const std::vector<Region> regions = greedy_regions(scenes[s], policy, ct.k, env);
        const std::vector<Detection> dets = full_pipeline(
            scenes[s], regions, env.zoom, det,
            mix_seed(det.seed, hash_tag("ct-detect"), hash_tag(scenes[s].source_id)));
        result.confidences[s] = match_detections(scenes[s], dets);
        weights[s] = collaborative_reweight(result.confidences[s]);
    });

    TrainConfig tc;
    tc.batch = ct.batch;
    tc.lr = ct.policy_lr;
    tc.iterations = ct.policy_iters;
    tc.T = ct.k;
    tc.eps_start = ct.eps_start;
    tc.eps_end = ct.eps_end;
    tc.include_guided = ct.include_guided;
    tc.jobs = ct.jobs;
    tc.seed = mix_seed(ct.seed, hash_tag("ct-policy"));
    tc.hidden_width = policy.hidden_width;
    result.policy = train(scenes, tc, env, weights, &policy).params;

    // Exposure histogram over effective scales seen through the new regions.
    for (const Scene& scene : scenes) {
        const std::vector<Region> regions = greedy_regions(scene, result.policy, ct.k, env);
        for (const Region& region : regions) {
            const double m = magnification(region.box, env.zoom);
            for (const ObjectAnnotation& obj : scene.objects)
                if (region.box.contains_point(obj.box.cx(), obj.box.cy()))
                    result.exposure[static_cast<std::size_t>(
                        skill_bin(object_scale(obj) * m))] += 1.0;
        }
    }
    double total = 0;
    for (double e : result.exposure) total += e;
    result.detector = total > 0 ? detector_finetune(det, result.exposure, ct.finetune_eta) : det;
    return result;
}

}  // namespace adazoom
