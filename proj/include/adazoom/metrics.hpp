#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "adazoom/geometry.hpp"
#include "adazoom/scene.hpp"

namespace adazoom {

/// COCO-convention object size buckets on box area.
struct SizeBuckets {
    double small_max_area = 32.0 * 32.0;
    double medium_max_area = 96.0 * 96.0;

    int bucket_of(double area) const {
        if (area < small_max_area) return 0;
        if (area < medium_max_area) return 1;
        return 2;
    }
};

inline constexpr std::array<const char*, 3> kBucketNames = {"small", "medium", "large"};

/// Fraction of the bucket's objects enclosed (containment >= rho) by at least
/// one of the first K regions. Empty bucket reports absent rather than zero.
inline std::optional<double> recall_at_k(const Scene& scene, std::span<const Region> regions,
                                         int bucket, const SizeBuckets& buckets,
                                         double rho = 1.0) {
    int total = 0;
    int enclosed = 0;
    for (const ObjectAnnotation& obj : scene.objects) {
        if (buckets.bucket_of(obj.box.area()) != bucket) continue;
        ++total;
        for (const Region& region : regions) {
            if (containment_fraction(obj.box, region.box) >= rho - 1e-12) {
                ++enclosed;
                break;
            }
        }
    }
    if (total == 0) return std::nullopt;
    return static_cast<double>(enclosed) / total;
}

inline std::vector<double> coco_iou_thresholds() {
    std::vector<double> t;
    for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
    return t;
}

struct PrPoint {
    double recall = 0;
    double precision = 0;
};

struct PrCurve {
    double iou_threshold = 0;
    int category = 0;
    std::vector<PrPoint> points;
};

struct ApResult {
    double ap = 0;
    double ap50 = 0;
    double ap75 = 0;
    std::vector<PrCurve> curves;  // at 0.50 and 0.75
};

namespace detail {

/// AP for one (category, iou threshold): rank detections by confidence,
/// greedily assign each to its best-IoU unmatched GT, integrate the
/// all-point-interpolated precision envelope over recall.
inline double ap_single(const std::vector<Scene>& scenes,
                        const std::vector<std::vector<Detection>>& dets_per_scene, int category,
                        double iou_threshold, int npos, std::vector<PrPoint>* curve) {
    struct Ranked {
        double confidence;
        int scene;
        int id;
        const Detection* det;
    };
    std::vector<Ranked> ranked;
    for (std::size_t s = 0; s < dets_per_scene.size(); ++s)
        for (const Detection& d : dets_per_scene[s])
            if (d.category == category)
                ranked.push_back({d.confidence, static_cast<int>(s), d.id, &d});
    std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        if (a.scene != b.scene) return a.scene < b.scene;
        return a.id < b.id;
    });

    std::vector<std::vector<bool>> taken(scenes.size());
    for (std::size_t s = 0; s < scenes.size(); ++s)
        taken[s].assign(scenes[s].objects.size(), false);

    std::vector<bool> is_tp(ranked.size(), false);
    for (std::size_t r = 0; r < ranked.size(); ++r) {
        const Scene& scene = scenes[static_cast<std::size_t>(ranked[r].scene)];
        auto& used = taken[static_cast<std::size_t>(ranked[r].scene)];
        int best = -1;
        double best_iou = -1.0;
        for (std::size_t g = 0; g < scene.objects.size(); ++g) {
            if (used[g] || scene.objects[g].category != category) continue;
            const double v = iou(scene.objects[g].box, ranked[r].det->box);
            if (v >= iou_threshold && v > best_iou) {
                best = static_cast<int>(g);
                best_iou = v;
            }
        }
        if (best >= 0) {
            used[static_cast<std::size_t>(best)] = true;
            is_tp[r] = true;
        }
    }

    std::vector<double> recalls(ranked.size()), precisions(ranked.size());
    int tp = 0;
    for (std::size_t r = 0; r < ranked.size(); ++r) {
        if (is_tp[r]) ++tp;
        recalls[r] = static_cast<double>(tp) / npos;
        precisions[r] = static_cast<double>(tp) / static_cast<double>(r + 1);
    }
    // Precision envelope from the right, then sum rectangle areas at the
    // recall steps (all-point interpolation, the exact PR integral).
    double envelope = 0;
    double ap = 0;
    for (std::size_t r = ranked.size(); r-- > 0;) {
        envelope = std::max(envelope, precisions[r]);
        const double prev_recall = r > 0 ? recalls[r - 1] : 0.0;
        if (recalls[r] > prev_recall) ap += (recalls[r] - prev_recall) * envelope;
    }
    if (curve) {
        curve->clear();
        for (std::size_t r = 0; r < ranked.size(); ++r)
            curve->push_back({recalls[r], precisions[r]});
    }
    return ap;
}

}  // namespace detail

/// COCO-style AP over IoU thresholds 0.5:0.05:0.95, averaged over the
/// categories present in the ground truth. Throws when no scene has any GT.
inline ApResult average_precision(const std::vector<Scene>& scenes,
                                  const std::vector<std::vector<Detection>>& dets_per_scene,
                                  std::span<const double> iou_thresholds = {}) {
    if (scenes.size() != dets_per_scene.size())
        throw std::invalid_argument("average_precision: detections misaligned with scenes");
    std::vector<double> thresholds(iou_thresholds.begin(), iou_thresholds.end());
    if (thresholds.empty()) thresholds = coco_iou_thresholds();

    std::map<int, int> npos_by_category;
    for (const Scene& scene : scenes)
        for (const ObjectAnnotation& obj : scene.objects) ++npos_by_category[obj.category];
    if (npos_by_category.empty())
        throw std::invalid_argument("average_precision: no ground truth in any scene");

    ApResult result;
    double ap_sum = 0, ap50_sum = 0, ap75_sum = 0;
    int ap_terms = 0;
    for (const auto& [category, npos] : npos_by_category) {
        for (double thr : thresholds) {
            const bool keep_curve = std::abs(thr - 0.5) < 1e-9 || std::abs(thr - 0.75) < 1e-9;
            std::vector<PrPoint> curve;
            const double ap = detail::ap_single(scenes, dets_per_scene, category, thr, npos,
                                                keep_curve ? &curve : nullptr);
            ap_sum += ap;
            ++ap_terms;
            if (std::abs(thr - 0.5) < 1e-9) ap50_sum += ap;
            if (std::abs(thr - 0.75) < 1e-9) ap75_sum += ap;
            if (keep_curve) result.curves.push_back({thr, category, std::move(curve)});
        }
    }
    const double categories = static_cast<double>(npos_by_category.size());
    result.ap = ap_sum / ap_terms;
    result.ap50 = ap50_sum / categories;
    result.ap75 = ap75_sum / categories;
    return result;
}

/// Pixels processed by the resize-and-detect pipeline, relative to the native
/// image: the resized whole image plus every resized region. Linear-time
/// proxy for inference cost.
inline double cost_proxy(std::span<const Region> regions, const ZoomSpec& zoom, double img_w,
                         double img_h) {
    auto resized_pixels = [&](double w, double h) {
        const double short_edge = std::min(w, h);
        const double m = short_edge > 0 ? std::max(1.0, zoom.target_short_edge / short_edge) : 1.0;
        return w * m * h * m;
    };
    double total = resized_pixels(img_w, img_h);
    for (const Region& region : regions) total += resized_pixels(region.box.w, region.box.h);
    return total / (img_w * img_h);
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct PerSceneRow {
    std::string scene_id;
    int objects = 0;
    double cost = 0;  // at k_max
    std::array<std::optional<double>, 3> recall;  // at k_max, by bucket
};

struct EvalReport {
    double ap = 0;
    double ap50 = 0;
    double ap75 = 0;
    int k_max = 0;
    // recall_vs_k[k-1][bucket]: mean over the scenes where the bucket is
    // nonempty, for K = 1..k_max. Absent when no scene has the bucket.
    std::vector<std::array<std::optional<double>, 3>> recall_vs_k;
    std::vector<double> cost_vs_k;  // K = 0..k_max
    std::vector<PerSceneRow> per_scene;
    std::vector<PrCurve> pr_curves;
};

/// Aggregates metrics for one run: AP from the merged detections, recall and
/// cost curves from nested prefixes of each scene's region list.
inline EvalReport build_eval_report(const std::vector<Scene>& scenes,
                                    const std::vector<std::vector<Region>>& regions_per_scene,
                                    const std::vector<std::vector<Detection>>& dets_per_scene,
                                    const ZoomSpec& zoom, double rho = 1.0,
                                    const SizeBuckets& buckets = {}) {
    if (scenes.size() != regions_per_scene.size())
        throw std::invalid_argument("build_eval_report: regions misaligned with scenes");
    EvalReport report;
    const ApResult ap = average_precision(scenes, dets_per_scene);
    report.ap = ap.ap;
    report.ap50 = ap.ap50;
    report.ap75 = ap.ap75;
    report.pr_curves = ap.curves;

    for (const auto& regions : regions_per_scene)
        report.k_max = std::max(report.k_max, static_cast<int>(regions.size()));

    for (int k = 1; k <= report.k_max; ++k) {
        std::array<std::optional<double>, 3> row;
        for (int b = 0; b < 3; ++b) {
            double sum = 0;
            int scenes_with_bucket = 0;
            for (std::size_t s = 0; s < scenes.size(); ++s) {
                const auto& regions = regions_per_scene[s];
                const int prefix = std::min<int>(k, static_cast<int>(regions.size()));
                const auto r = recall_at_k(
                    scenes[s], std::span<const Region>(regions.data(), prefix), b, buckets, rho);
                if (r) {
                    sum += *r;
                    ++scenes_with_bucket;
                }
            }
            if (scenes_with_bucket > 0) row[b] = sum / scenes_with_bucket;
        }
        report.recall_vs_k.push_back(row);
    }

    for (int k = 0; k <= report.k_max; ++k) {
        double sum = 0;
        for (std::size_t s = 0; s < scenes.size(); ++s) {
            const auto& regions = regions_per_scene[s];
            const int prefix = std::min<int>(k, static_cast<int>(regions.size()));
            sum += cost_proxy(std::span<const Region>(regions.data(), prefix), zoom,
                              scenes[s].width, scenes[s].height);
        }
        report.cost_vs_k.push_back(scenes.empty() ? 0 : sum / scenes.size());
    }

    for (std::size_t s = 0; s < scenes.size(); ++s) {
        PerSceneRow row;
        row.scene_id = scenes[s].source_id;
        row.objects = static_cast<int>(scenes[s].objects.size());
        row.cost = cost_proxy(regions_per_scene[s], zoom, scenes[s].width, scenes[s].height);
        for (int b = 0; b < 3; ++b)
            row.recall[b] = recall_at_k(scenes[s], regions_per_scene[s], b, buckets, rho);
        report.per_scene.push_back(std::move(row));
    }
    return report;
}

namespace detail {

inline std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace detail

inline nlohmann::json eval_report_to_json(const EvalReport& report) {
    nlohmann::json per_scene = nlohmann::json::array();
    for (const PerSceneRow& row : report.per_scene) {
        nlohmann::json r = {{"scene_id", row.scene_id},
                            {"objects", row.objects},
                            {"cost", row.cost}};
        for (int b = 0; b < 3; ++b)
            r[std::string("recall_") + kBucketNames[b]] =
                row.recall[b] ? nlohmann::json(*row.recall[b]) : nlohmann::json(nullptr);
        per_scene.push_back(std::move(r));
    }
    nlohmann::json recall_vs_k = nlohmann::json::array();
    for (std::size_t k = 0; k < report.recall_vs_k.size(); ++k) {
        nlohmann::json row = {{"k", k + 1}};
        for (int b = 0; b < 3; ++b)
            row[kBucketNames[b]] = report.recall_vs_k[k][b]
                                       ? nlohmann::json(*report.recall_vs_k[k][b])
                                       : nlohmann::json(nullptr);
        recall_vs_k.push_back(std::move(row));
    }
    nlohmann::json curves = nlohmann::json::array();
    for (const PrCurve& c : report.pr_curves) {
        nlohmann::json pts = nlohmann::json::array();
        for (const PrPoint& p : c.points) pts.push_back({{"r", p.recall}, {"p", p.precision}});
        curves.push_back({{"iou", c.iou_threshold}, {"category", c.category},
                          {"points", std::move(pts)}});
    }
    return {{"ap", report.ap},           {"ap50", report.ap50},
            {"ap75", report.ap75},       {"k_max", report.k_max},
            {"cost_vs_k", report.cost_vs_k}, {"recall_vs_k", std::move(recall_vs_k)},
            {"per_scene", std::move(per_scene)}, {"pr_curves", std::move(curves)}};
}

inline EvalReport eval_report_from_json(const nlohmann::json& doc) {
    EvalReport report;
    report.ap = doc.at("ap").get<double>();
    report.ap50 = doc.at("ap50").get<double>();
    report.ap75 = doc.at("ap75").get<double>();
    report.k_max = doc.at("k_max").get<int>();
    report.cost_vs_k = doc.at("cost_vs_k").get<std::vector<double>>();
    for (const auto& row : doc.at("recall_vs_k")) {
        std::array<std::optional<double>, 3> r;
        for (int b = 0; b < 3; ++b)
            if (!row.at(kBucketNames[b]).is_null())
                r[b] = row.at(kBucketNames[b]).get<double>();
        report.recall_vs_k.push_back(r);
    }
    for (const auto& row : doc.at("per_scene")) {
        PerSceneRow r;
        r.scene_id = row.at("scene_id").get<std::string>();
        r.objects = row.at("objects").get<int>();
        r.cost = row.at("cost").get<double>();
        for (int b = 0; b < 3; ++b) {
            const auto& v = row.at(std::string("recall_") + kBucketNames[b]);
            if (!v.is_null()) r.recall[b] = v.get<double>();
        }
        report.per_scene.push_back(std::move(r));
    }
    for (const auto& c : doc.at("pr_curves")) {
        PrCurve curve;
        curve.iou_threshold = c.at("iou").get<double>();
        curve.category = c.at("category").get<int>();
        for (const auto& p : c.at("points"))
            curve.points.push_back({p.at("r").get<double>(), p.at("p").get<double>()});
        report.pr_curves.push_back(std::move(curve));
    }
    return report;
}

/// Writes summary.json, recall_vs_k.csv, cost_vs_k.csv and pr_curves.csv.
/// Floats carry six decimal places; AP values are scaled to percent in the
/// summary. Emission is deterministic, so re-emitting a report reproduces
/// the files byte for byte.
inline void emit_report(const EvalReport& report, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);

    auto open = [&](const char* name) {
        std::ofstream out(fs::path(dir) / name);
        if (!out) throw std::runtime_error(std::string("emit_report: cannot write ") +
                                           (fs::path(dir) / name).string());
        return out;
    };

    {
        nlohmann::json summary = {
            {"ap_percent", nlohmann::json::parse(detail::fixed6(report.ap * 100.0))},
            {"ap50_percent", nlohmann::json::parse(detail::fixed6(report.ap50 * 100.0))},
            {"ap75_percent", nlohmann::json::parse(detail::fixed6(report.ap75 * 100.0))},
            {"k_max", report.k_max},
            {"num_scenes", report.per_scene.size()}};
        nlohmann::json per_scene = nlohmann::json::array();
        for (const PerSceneRow& row : report.per_scene) {
            nlohmann::json r = {{"scene_id", row.scene_id},
                                {"objects", row.objects},
                                {"cost", nlohmann::json::parse(detail::fixed6(row.cost))}};
            for (int b = 0; b < 3; ++b)
                r[std::string("recall_") + kBucketNames[b]] =
                    row.recall[b] ? nlohmann::json::parse(detail::fixed6(*row.recall[b]))
                                  : nlohmann::json(nullptr);
            per_scene.push_back(std::move(r));
        }
        summary["per_scene"] = std::move(per_scene);
        auto out = open("summary.json");
        out << summary.dump(2) << "\n";
    }
    {
        auto out = open("recall_vs_k.csv");
        out << "k,bucket,recall\n";
        for (std::size_t k = 0; k < report.recall_vs_k.size(); ++k)
            for (int b = 0; b < 3; ++b) {
                out << (k + 1) << "," << kBucketNames[b] << ",";
                if (report.recall_vs_k[k][b]) out << detail::fixed6(*report.recall_vs_k[k][b]);
                out << "\n";
            }
    }
    {
        auto out = open("cost_vs_k.csv");
        out << "k,cost\n";
        for (std::size_t k = 0; k < report.cost_vs_k.size(); ++k)
            out << k << "," << detail::fixed6(report.cost_vs_k[k]) << "\n";
    }
    {
        auto out = open("pr_curves.csv");
        out << "iou,category,recall,precision\n";
        for (const PrCurve& c : report.pr_curves)
            for (const PrPoint& p : c.points)
                out << detail::fixed6(c.iou_threshold) << "," << c.category << ","
                    << detail::fixed6(p.recall) << "," << detail::fixed6(p.precision) << "\n";
    }
}

}  // namespace adazoom
