#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include <json.hpp>

#include "adazoom/checkpoint.hpp"
#include "adazoom/detector.hpp"
#include "adazoom/env.hpp"
#include "adazoom/scene.hpp"
#include "adazoom/training.hpp"

namespace adazoom {

inline nlohmann::json reward_to_json(const RewardConfig& c) {
    return {{"beta", c.beta}, {"kappa", c.kappa}, {"rho", c.rho}};
}

inline RewardConfig reward_from_json(const nlohmann::json& doc) {
    RewardConfig c;
    c.beta = doc.value("beta", c.beta);
    c.kappa = doc.value("kappa", c.kappa);
    c.rho = doc.value("rho", c.rho);
    c.validate();
    return c;
}

inline nlohmann::json train_to_json(const TrainConfig& c) {
    return {{"batch", c.batch},
            {"lr", c.lr},
            {"iterations", c.iterations},
            {"gamma", c.gamma},
            {"baseline_decay", c.baseline_decay},
            {"entropy_coef", c.entropy_coef},
            {"eps_start", c.eps_start},
            {"eps_end", c.eps_end},
            {"eps_anneal_frac", c.eps_anneal_frac},
            {"T", c.T},
            {"grad_clip", c.grad_clip},
            {"include_guided", c.include_guided},
            {"hidden_width", c.hidden_width}};
}

inline TrainConfig train_from_json(const nlohmann::json& doc) {
    TrainConfig c;
    c.batch = doc.value("batch", c.batch);
    c.lr = doc.value("lr", c.lr);
    c.iterations = doc.value("iterations", c.iterations);
    c.gamma = doc.value("gamma", c.gamma);
    c.baseline_decay = doc.value("baseline_decay", c.baseline_decay);
    c.entropy_coef = doc.value("entropy_coef", c.entropy_coef);
    c.eps_start = doc.value("eps_start", c.eps_start);
    c.eps_end = doc.value("eps_end", c.eps_end);
    c.eps_anneal_frac = doc.value("eps_anneal_frac", c.eps_anneal_frac);
    c.T = doc.value("T", c.T);
    c.grad_clip = doc.value("grad_clip", c.grad_clip);
    c.include_guided = doc.value("include_guided", c.include_guided);
    c.hidden_width = doc.value("hidden_width", c.hidden_width);
    c.validate();
    return c;
}

inline nlohmann::json detector_to_json(const DetectorConfig& c) {
    return {{"mu", c.mu},
            {"tau", c.tau},
            {"jitter", c.jitter},
            {"fp_rate", c.fp_rate},
            {"min_confidence", c.min_confidence},
            {"skill_offset", c.skill_offset}};
}

inline DetectorConfig detector_from_json(const nlohmann::json& doc) {
    DetectorConfig c;
    c.mu = doc.value("mu", c.mu);
    c.tau = doc.value("tau", c.tau);
    c.jitter = doc.value("jitter", c.jitter);
    c.fp_rate = doc.value("fp_rate", c.fp_rate);
    c.min_confidence = doc.value("min_confidence", c.min_confidence);
    if (doc.contains("skill_offset")) {
        const auto v = doc.at("skill_offset").get<std::vector<double>>();
        if (v.size() != kSkillBins)
            throw std::runtime_error("detector config: skill_offset needs 8 bins");
        std::copy(v.begin(), v.end(), c.skill_offset.begin());
    }
    c.validate();
    return c;
}

inline nlohmann::json synth_to_json(const SynthSceneConfig& c) {
    return {{"width", c.width},
            {"height", c.height},
            {"clusters", c.clusters},
            {"objects_per_cluster", c.objects_per_cluster},
            {"small_side", {c.small_side.lo, c.small_side.hi}},
            {"medium_side", {c.medium_side.lo, c.medium_side.hi}},
            {"large_side", {c.large_side.lo, c.large_side.hi}},
            {"medium_fraction", c.medium_fraction},
            {"large_scatter_fraction", c.large_scatter_fraction},
            {"cluster_spread", c.cluster_spread}};
}

inline SynthSceneConfig synth_from_json(const nlohmann::json& doc) {
    SynthSceneConfig c;
    c.width = doc.value("width", c.width);
    c.height = doc.value("height", c.height);
    c.clusters = doc.value("clusters", c.clusters);
    c.objects_per_cluster = doc.value("objects_per_cluster", c.objects_per_cluster);
    auto range = [&](const char* key, SideRange fallback) {
        if (!doc.contains(key)) return fallback;
        const auto v = doc.at(key).get<std::vector<double>>();
        if (v.size() != 2) throw std::runtime_error("synth config: side ranges are [lo, hi]");
        return SideRange{v[0], v[1]};
    };
    c.small_side = range("small_side", c.small_side);
    c.medium_side = range("medium_side", c.medium_side);
    c.large_side = range("large_side", c.large_side);
    c.medium_fraction = doc.value("medium_fraction", c.medium_fraction);
    c.large_scatter_fraction = doc.value("large_scatter_fraction", c.large_scatter_fraction);
    c.cluster_spread = doc.value("cluster_spread", c.cluster_spread);
    c.validate();
    return c;
}

/// gen-scenes settings: how many scenes and how the cluster count varies.
struct GenConfig {
    int count = 50;
    int clusters_min = 2;
    int clusters_max = 4;
    SynthSceneConfig synth;
};

inline nlohmann::json gen_to_json(const GenConfig& c) {
    return {{"count", c.count},
            {"clusters_min", c.clusters_min},
            {"clusters_max", c.clusters_max},
            {"synth", synth_to_json(c.synth)}};
}

inline GenConfig gen_from_json(const nlohmann::json& doc) {
    GenConfig c;
    c.count = doc.value("count", c.count);
    c.clusters_min = doc.value("clusters_min", c.clusters_min);
    c.clusters_max = doc.value("clusters_max", c.clusters_max);
    if (doc.contains("synth")) c.synth = synth_from_json(doc.at("synth"));
    if (c.count < 0 || c.clusters_min < 0 || c.clusters_max < c.clusters_min)
        throw std::runtime_error("gen config: bad count or cluster bounds");
    return c;
}

inline nlohmann::json ct_to_json(const CtConfig& c) {
    return {{"policy_iters", c.policy_iters},
            {"policy_lr", c.policy_lr},
            {"batch", c.batch},
            {"k", c.k},
            {"finetune_eta", c.finetune_eta},
            {"eps_start", c.eps_start},
            {"eps_end", c.eps_end},
            {"include_guided", c.include_guided}};
}

inline CtConfig ct_from_json(const nlohmann::json& doc) {
    CtConfig c;
    c.policy_iters = doc.value("policy_iters", c.policy_iters);
    c.policy_lr = doc.value("policy_lr", c.policy_lr);
    c.batch = doc.value("batch", c.batch);
    c.k = doc.value("k", c.k);
    c.finetune_eta = doc.value("finetune_eta", c.finetune_eta);
    c.eps_start = doc.value("eps_start", c.eps_start);
    c.eps_end = doc.value("eps_end", c.eps_end);
    c.include_guided = doc.value("include_guided", c.include_guided);
    return c;
}

/// Everything a run needs. One root seed feeds named sub-streams (scene
/// generation, rollouts, detector noise), so components can be re-run in
/// isolation; sub-config seeds are always derived, never configured.
struct RunConfig {
    std::uint64_t seed = 0;
    int jobs = 1;
    int k = 7;
    int ct_rounds = 1;
    std::string scenes_dir;
    std::string out_dir;
    std::string checkpoint;
    GridDims grid;
    ZoomSpec zoom;
    RewardConfig reward;
    TrainConfig train;
    DetectorConfig detector;
    GenConfig gen;
    CtConfig ct;

    EnvConfig env() const { return {grid, zoom, reward}; }

    /// Seeds derived from the root for each randomness consumer.
    std::uint64_t scene_seed(int index) const {
        return mix_seed(seed, hash_tag("scene"), static_cast<std::uint64_t>(index));
    }
    std::uint64_t train_seed() const { return mix_seed(seed, hash_tag("train")); }
    std::uint64_t detector_seed() const { return mix_seed(seed, hash_tag("detector")); }
    std::uint64_t ct_seed() const { return mix_seed(seed, hash_tag("ct")); }
};

inline nlohmann::json run_config_to_json(const RunConfig& c) {
    return {{"seed", c.seed},
            {"jobs", c.jobs},
            {"k", c.k},
            {"ct_rounds", c.ct_rounds},
            {"scenes_dir", c.scenes_dir},
            {"out_dir", c.out_dir},
            {"checkpoint", c.checkpoint},
            {"grid", grid_to_json(c.grid)},
            {"zoom", zoom_to_json(c.zoom)},
            {"reward", reward_to_json(c.reward)},
            {"train", train_to_json(c.train)},
            {"detector", detector_to_json(c.detector)},
            {"gen", gen_to_json(c.gen)},
            {"ct", ct_to_json(c.ct)}};
}

inline RunConfig run_config_from_json(const nlohmann::json& doc) {
    RunConfig c;
    c.seed = doc.value("seed", c.seed);
    c.jobs = doc.value("jobs", c.jobs);
    c.k = doc.value("k", c.k);
    c.ct_rounds = doc.value("ct_rounds", c.ct_rounds);
    c.scenes_dir = doc.value("scenes_dir", c.scenes_dir);
    c.out_dir = doc.value("out_dir", c.out_dir);
    c.checkpoint = doc.value("checkpoint", c.checkpoint);
    if (doc.contains("grid")) c.grid = grid_from_json(doc.at("grid"));
    if (doc.contains("zoom")) c.zoom = zoom_from_json(doc.at("zoom"));
    if (doc.contains("reward")) c.reward = reward_from_json(doc.at("reward"));
    if (doc.contains("train")) c.train = train_from_json(doc.at("train"));
    if (doc.contains("detector")) c.detector = detector_from_json(doc.at("detector"));
    if (doc.contains("gen")) c.gen = gen_from_json(doc.at("gen"));
    if (doc.contains("ct")) c.ct = ct_from_json(doc.at("ct"));
    if (c.k < 0) throw std::runtime_error("config: k must be >= 0");
    if (c.jobs < 1) throw std::runtime_error("config: jobs must be >= 1");
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("config (" + path + "): " + e.what());
    }
    try {
        return run_config_from_json(doc);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("config (" + path + "): " + e.what());
    }
}

}  // namespace adazoom
