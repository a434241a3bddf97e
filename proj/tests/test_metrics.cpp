#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include "adazoom/metrics.hpp"
#include "adazoom/rng.hpp"

using namespace adazoom;
namespace fs = std::filesystem;

namespace {

Scene scene_with(std::vector<Box> boxes, int category = 1) {
    Scene scene;
    scene.width = scene.height = 1000;
    scene.source_id = "m";
    for (const Box& b : boxes)
        scene.objects.push_back({b, category, static_cast<int>(scene.objects.size())});
    return scene;
}

// Threshold-sweep AP oracle: at every distinct confidence cutoff, rebuild the
// greedy matching from scratch, then integrate the precision envelope over
// the achieved recall steps.
double ap_threshold_oracle(const std::vector<Scene>& scenes,
                           const std::vector<std::vector<Detection>>& dets, int category,
                           double iou_thr) {
    struct Entry {
        double conf;
        int scene;
        int id;
        Box box;
    };
    std::vector<Entry> all;
    int npos = 0;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        for (const auto& obj : scenes[s].objects) npos += obj.category == category;
        for (const auto& d : dets[s])
            if (d.category == category) all.push_back({d.confidence, (int)s, d.id, d.box});
    }
    std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) {
        if (a.conf != b.conf) return a.conf > b.conf;
        if (a.scene != b.scene) return a.scene < b.scene;
        return a.id < b.id;
    });
    if (npos == 0) return 0.0;

    auto pr_at_cutoff = [&](std::size_t count) {
        std::vector<std::vector<bool>> used(scenes.size());
        for (std::size_t s = 0; s < scenes.size(); ++s)
            used[s].assign(scenes[s].objects.size(), false);
        int tp = 0;
        for (std::size_t r = 0; r < count; ++r) {
            const Entry& e = all[r];
            int best = -1;
            double best_iou = -1;
            const Scene& scene = scenes[e.scene];
            for (std::size_t g = 0; g < scene.objects.size(); ++g) {
                if (used[e.scene][g] || scene.objects[g].category != category) continue;
                const double v = iou(scene.objects[g].box, e.box);
                if (v >= iou_thr && v > best_iou) {
                    best = (int)g;
                    best_iou = v;
                }
            }
            if (best >= 0) {
                used[e.scene][best] = true;
                ++tp;
            }
        }
        return std::pair<double, double>{(double)tp / npos,
                                         count ? (double)tp / count : 1.0};
    };

    std::vector<std::pair<double, double>> points;
    for (std::size_t count = 1; count <= all.size(); ++count)
        points.push_back(pr_at_cutoff(count));

    std::set<double> recall_steps;
    for (const auto& [r, p] : points) recall_steps.insert(r);
    double ap = 0;
    double prev = 0;
    for (double r : recall_steps) {
        if (r <= 0) continue;
        double env = 0;
        for (const auto& [pr, pp] : points)
            if (pr >= r - 1e-12) env = std::max(env, pp);
        ap += (r - prev) * env;
        prev = r;
    }
    return ap;
}

}  // namespace

TEST_CASE("recall_at_k") {
    const SizeBuckets buckets;
    // Areas: 100 (small), 50*50 (medium), 150*150 (large).
    const Scene scene =
        scene_with({{10, 10, 10, 10}, {200, 200, 50, 50}, {600, 600, 150, 150}});

    SUBCASE("all enclosed by a union of regions") {
        std::vector<Region> regions = {{{0, 0, 300, 300}, 0, 0}, {{550, 550, 300, 300}, 1, 0}};
        for (int b = 0; b < 3; ++b)
            CHECK(*recall_at_k(scene, regions, b, buckets) == doctest::Approx(1.0));
    }
    SUBCASE("no regions, no recall") {
        for (int b = 0; b < 3; ++b)
            CHECK(*recall_at_k(scene, {}, b, buckets) == doctest::Approx(0.0));
    }
    SUBCASE("an empty bucket is absent, not zero") {
        const Scene no_medium = scene_with({{10, 10, 10, 10}});
        CHECK(!recall_at_k(no_medium, {}, 1, buckets).has_value());
        CHECK(recall_at_k(no_medium, {}, 0, buckets).has_value());
    }
    SUBCASE("partial containment needs the full rho fraction") {
        std::vector<Region> half = {{{0, 0, 15, 20}, 0, 0}};  // half of the small box
        CHECK(*recall_at_k(scene, half, 0, buckets, 1.0) == doctest::Approx(0.0));
        CHECK(*recall_at_k(scene, half, 0, buckets, 0.5) == doctest::Approx(1.0));
    }
    SUBCASE("monotone in K for nested prefixes") {
        Rng rng(3);
        SynthSceneConfig cfg;
        cfg.seed = 5;
        cfg.large_scatter_fraction = 0.3;
        cfg.medium_fraction = 0.3;
        const Scene s = synth_scene(cfg);
        std::vector<Region> regions;
        for (int k = 0; k < 8; ++k)
            regions.push_back({{rng.uniform(0, 700), rng.uniform(0, 700), 300, 300}, 0, 0});
        for (int b = 0; b < 3; ++b) {
            double prev = 0;
            for (std::size_t k = 0; k <= regions.size(); ++k) {
                const auto r = recall_at_k(s, std::span<const Region>(regions.data(), k), b,
                                           buckets);
                if (!r) continue;
                CHECK(*r >= prev - 1e-12);
                prev = *r;
            }
        }
    }
}

TEST_CASE("average_precision") {
    SUBCASE("one perfect detection is a perfect score") {
        const Scene scene = scene_with({{100, 100, 50, 50}});
        std::vector<std::vector<Detection>> dets = {{{{100, 100, 50, 50}, 0.9, 1, 0, {}}}};
        const ApResult ap = average_precision({scene}, dets);
        CHECK(ap.ap == doctest::Approx(1.0));
        CHECK(ap.ap50 == doctest::Approx(1.0));
        CHECK(ap.ap75 == doctest::Approx(1.0));
    }
    SUBCASE("a higher-ranked false positive halves AP50") {
        const Scene scene = scene_with({{100, 100, 50, 50}});
        std::vector<std::vector<Detection>> dets = {
            {{{600, 600, 50, 50}, 0.9, 1, 0, {}}, {{100, 100, 50, 50}, 0.8, 1, 1, {}}}};
        const ApResult ap = average_precision({scene}, dets, std::vector<double>{0.5});
        CHECK(ap.ap50 == doctest::Approx(0.5));
    }
    SUBCASE("duplicates count once; the survivor ranks the curve") {
        const Scene scene = scene_with({{100, 100, 50, 50}});
        std::vector<std::vector<Detection>> dets = {
            {{{100, 100, 50, 50}, 0.9, 1, 0, {}}, {{100, 100, 50, 50}, 0.8, 1, 1, {}}}};
        const ApResult ap = average_precision({scene}, dets, std::vector<double>{0.5});
        REQUIRE(ap.curves.size() == 1);
        REQUIRE(ap.curves[0].points.size() == 2);
        CHECK(ap.curves[0].points[0].precision == doctest::Approx(1.0));
        CHECK(ap.curves[0].points[1].precision == doctest::Approx(0.5));  // dup is a FP
        CHECK(ap.ap50 == doctest::Approx(1.0));
    }
    SUBCASE("no ground truth anywhere is an error") {
        Scene empty;
        empty.width = empty.height = 100;
        CHECK_THROWS_AS(average_precision({empty}, {{}}), std::invalid_argument);
    }
    SUBCASE("invariant under rank-preserving confidence maps") {
        Rng rng(9);
        SynthSceneConfig cfg;
        cfg.seed = 2;
        const Scene scene = synth_scene(cfg);
        std::vector<Detection> dets;
        for (int i = 0; i < 40; ++i) {
            const auto& obj = scene.objects[rng.uniform_int(scene.objects.size())];
            Detection d;
            d.box = {obj.box.x + rng.uniform(-3, 3), obj.box.y + rng.uniform(-3, 3), obj.box.w,
                     obj.box.h};
            d.confidence = rng.uniform(0.1, 0.9);
            d.category = obj.category;
            d.id = i;
            dets.push_back(d);
        }
        const ApResult a = average_precision({scene}, {dets});
        for (Detection& d : dets) d.confidence = 0.2 + 0.5 * d.confidence;
        const ApResult b = average_precision({scene}, {dets});
        CHECK(a.ap == doctest::Approx(b.ap).epsilon(1e-12));
    }
    SUBCASE("equals the threshold-sweep oracle on small instances") {
        Rng rng(13);
        for (int trial = 0; trial < 30; ++trial) {
            const Scene scene = scene_with(
                {{100, 100, 40, 40}, {300, 300, 40, 40}, {500, 500, 40, 40}});
            std::vector<Detection> dets;
            const int n = 3 + static_cast<int>(rng.uniform_int(7));
            for (int i = 0; i < n; ++i) {
                Detection d;
                const auto& obj = scene.objects[rng.uniform_int(3)];
                d.box = {obj.box.x + rng.uniform(-25, 25), obj.box.y + rng.uniform(-25, 25),
                         40, 40};
                d.confidence = rng.uniform();
                d.category = 1;
                d.id = i;
                dets.push_back(d);
            }
            for (double thr : {0.5, 0.75}) {
                const ApResult got =
                    average_precision({scene}, {dets}, std::vector<double>{thr});
                const double want = ap_threshold_oracle({scene}, {dets}, 1, thr);
                CHECK(std::abs(got.ap - want) <= 1e-9);
            }
        }
    }
}

TEST_CASE("cost_proxy") {
    const ZoomSpec zoom;

    SUBCASE("no regions is the resized-image share") {
        // 1600x1200: short edge above target, clamp to native -> ratio 1.
        CHECK(cost_proxy({}, zoom, 1600, 1200) == doctest::Approx(1.0));
        // 400x400 upscales by 2 -> 4x the pixels.
        CHECK(cost_proxy({}, zoom, 400, 400) == doctest::Approx(4.0));
    }
    SUBCASE("every region strictly adds cost, affinely for equal regions") {
        std::vector<Region> regions;
        double prev = cost_proxy(regions, zoom, 1600, 1200);
        double slope = 0;
        for (int k = 1; k <= 7; ++k) {
            regions.push_back({{10.0 * k, 10.0 * k, 240, 240}, 0, 1});
            const double cost = cost_proxy(regions, zoom, 1600, 1200);
            CHECK(cost > prev);
            if (k == 1) slope = cost - prev;
            else CHECK(cost - prev == doctest::Approx(slope).epsilon(1e-9));
            prev = cost;
        }
    }
}

TEST_CASE("emit_report") {
    const fs::path dir = fs::temp_directory_path() / "adazoom_report_test";
    fs::remove_all(dir);

    auto slurp = [](const fs::path& p) {
        std::ifstream in(p);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };

    SUBCASE("empty report emits headers only") {
        EvalReport report;
        emit_report(report, dir.string());
        CHECK(slurp(dir / "recall_vs_k.csv") == "k,bucket,recall\n");
        CHECK(slurp(dir / "cost_vs_k.csv") == "k,cost\n");
        CHECK(slurp(dir / "pr_curves.csv") == "iou,category,recall,precision\n");
        CHECK(!slurp(dir / "summary.json").empty());
    }
    SUBCASE("re-emitting is byte identical and row counts follow k_max") {
        const Scene scene =
            scene_with({{10, 10, 10, 10}, {200, 200, 50, 50}, {600, 600, 150, 150}});
        std::vector<std::vector<Region>> regions = {{{{0, 0, 300, 300}, 0, 0},
                                                     {{500, 500, 400, 400}, 1, 0},
                                                     {{0, 500, 300, 300}, 2, 0}}};
        std::vector<std::vector<Detection>> dets = {{{{10, 10, 10, 10}, 0.9, 1, 0, {}}}};
        const EvalReport report = build_eval_report({scene}, regions, dets, ZoomSpec{});
        CHECK(report.k_max == 3);

        emit_report(report, dir.string());
        const std::string first = slurp(dir / "recall_vs_k.csv");
        const std::string summary1 = slurp(dir / "summary.json");
        emit_report(report, dir.string());
        CHECK(slurp(dir / "recall_vs_k.csv") == first);
        CHECK(slurp(dir / "summary.json") == summary1);

        // Header plus k_max * 3 bucket rows.
        CHECK(std::count(first.begin(), first.end(), '\n') == 1 + report.k_max * 3);

        // The stored report JSON round-trips.
        const EvalReport back = eval_report_from_json(eval_report_to_json(report));
        CHECK(back.ap == report.ap);
        CHECK(back.cost_vs_k == report.cost_vs_k);
        CHECK(back.per_scene.size() == report.per_scene.size());
    }
}
