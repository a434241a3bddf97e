#pragma once

#include <span>
#include <utility>
#include <vector>

#include "adazoom/env.hpp"
#include "adazoom/policy.hpp"

namespace adazoom {

enum class RolloutMode { sample, greedy };

/// One step of an episode. The feature matrix of the state the action was
/// taken in is kept so the trainer can recompute grad log pi without
/// re-running the environment.
struct EpisodeStep {
    FeatureMatrix features;
    Action action;
    double logprob = 0;
    double reward = 0;
    Region region;
    bool guided = false;
};

struct Episode {
    std::vector<EpisodeStep> steps;
    double total_return = 0;
};

/// Rolls one episode of at most T steps: evaluate the policy on the state,
/// pick an action (sampled with guidance, or greedy), realize its region,
/// collect the reward and apply the history/feature/coverage updates.
/// Terminates early once no uncovered weight mass remains. Pure function of
/// (scene, params, mode, eps, rng seed).
inline Episode run_episode(const Scene& scene, const PolicyParams& params, RolloutMode mode,
                           int T, double guidance_eps, Rng& rng, const EnvConfig& env,
                           std::span<const double> weight_override = {}) {
    if (T < 1) throw std::invalid_argument("run_episode: T must be >= 1");
    Episode ep;
    State state = init_state(scene, env.grid, env.zoom);

    for (int t = 0; t < T; ++t) {
        // Terminal when nothing left to cover.
        double uncovered_mass = 0;
        for (std::size_t idx = 0; idx < scene.objects.size(); ++idx)
            if (!state.covered.count(scene.objects[idx].id))
                uncovered_mass += weight_override.empty() ? object_weight(scene.objects[idx])
                                                          : weight_override[idx];
        if (uncovered_mass <= 0.0) break;

        ActionDistribution dist = action_distribution(params, state);
        SampledAction chosen;
        if (mode == RolloutMode::greedy) {
            chosen.action = greedy_action(dist);
            chosen.logprob = dist.logprob(chosen.action);
        } else {
            chosen = sample_action(dist, state, scene, env.zoom, guidance_eps, rng,
                                   weight_override);
        }

        const Region region =
            realize_region(chosen.action.i, chosen.action.j, chosen.action.scale,
                           chosen.action.ratio, env.grid, scene.width, scene.height, env.zoom);
        const RewardResult rr = reward(scene, state, region, chosen.action.scale, env.zoom,
                                       env.reward, weight_override);

        EpisodeStep step;
        step.features = dist.release_features();
        step.action = chosen.action;
        step.logprob = chosen.logprob;
        step.reward = rr.r;
        step.region = region;
        step.guided = chosen.guided;
        ep.steps.push_back(std::move(step));
        ep.total_return += rr.r;

        const GridRect z = map_region_to_grid(region.box, env.grid, scene.width, scene.height);
        update_history(state, z);
        update_feature(state, z, env.reward.kappa);
        for (int id : rr.newly_covered) state.covered.insert(id);
        state.t = t + 1;
        if (rr.exhausted) break;
    }
    return ep;
}

/// Greedy top-K focus regions for a scene, in generation order.
inline std::vector<Region> greedy_regions(const Scene& scene, const PolicyParams& params, int k,
                                          const EnvConfig& env) {
    if (k <= 0) return {};
    Rng unused(0);
    const Episode ep = run_episode(scene, params, RolloutMode::greedy, k, 0.0, unused, env);
    std::vector<Region> regions;
    regions.reserve(ep.steps.size());
    for (const EpisodeStep& s : ep.steps) regions.push_back(s.region);
    return regions;
}

}  // namespace adazoom
