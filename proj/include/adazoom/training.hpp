#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "adazoom/parallel.hpp"
#include "adazoom/rollout.hpp"

namespace adazoom {

struct TrainConfig {
    int batch = 16;               // episodes per update
    double lr = 1e-2;             // paper-scale 2e-5 targets a CNN; linear heads want more
    int iterations = 2000;
    double gamma = 1.0;           // within-episode discount
    double baseline_decay = 0.9;  // moving-average baseline
    double entropy_coef = 0.0;
    double eps_start = 0.5;       // guidance schedule, linear eps_start -> eps_end
    double eps_end = 0.0;
    double eps_anneal_frac = 0.5; // fraction of iterations the schedule spans
    int T = 7;
    double grad_clip = 10.0;      // 0 disables
    bool include_guided = false;  // count guided steps in the gradient (unweighted)
    int hidden_width = 0;
    int jobs = 1;
    std::uint64_t seed = 0;

    void validate() const {
        if (batch < 1) throw std::invalid_argument("TrainConfig: batch must be >= 1");
        if (!(lr > 0)) throw std::invalid_argument("TrainConfig: lr must be positive");
        if (iterations < 0) throw std::invalid_argument("TrainConfig: negative iterations");
        if (!(gamma > 0) || gamma > 1)
            throw std::invalid_argument("TrainConfig: gamma must lie in (0,1]");
        if (T < 1) throw std::invalid_argument("TrainConfig: T must be >= 1");
    }

    double guidance_eps(int iteration) const {
        const double span = eps_anneal_frac * iterations;
        if (span <= 0) return eps_end;
        const double f = std::min(1.0, iteration / span);
        return eps_start + f * (eps_end - eps_start);
    }
};

struct UpdateStats {
    double grad_norm = 0;
    bool clipped = false;
    double mean_return = 0;
    double mean_step_reward = 0;
    int eligible_steps = 0;
};

/// One REINFORCE ascent step from a batch of episodes:
///   g  = mean over eligible steps of grad log pi(A_t|S_t) * (G_t - b)
///   G_t = sum_{t'>=t} gamma^(t'-t) r_t'
/// The scalar moving-average baseline b is read before and updated after the
/// step, so it is a constant w.r.t. the parameters and leaves the estimator
/// unbiased. Guided exploration steps are excluded unless configured in.
inline UpdateStats reinforce_update(PolicyParams& params, const std::vector<Episode>& episodes,
                                    const TrainConfig& cfg, double& baseline) {
    UpdateStats stats;
    PolicyParams grad = PolicyParams::zeros(params.feature_dim, params.n_s, params.n_r,
                                            params.hidden_width);
    double return_sum = 0;
    double reward_sum = 0;
    double rtg_sum = 0;
    int steps = 0;
    int rtg_count = 0;

    for (const Episode& ep : episodes) {
        return_sum += ep.total_return;
        double rtg = 0;  // return-to-go, built back to front
        std::vector<double> returns(ep.steps.size());
        for (std::size_t t = ep.steps.size(); t-- > 0;) {
            rtg = ep.steps[t].reward + cfg.gamma * rtg;
            returns[t] = rtg;
        }
        for (std::size_t t = 0; t < ep.steps.size(); ++t) {
            const EpisodeStep& step = ep.steps[t];
            reward_sum += step.reward;
            ++steps;
            rtg_sum += returns[t];
            ++rtg_count;
            if (step.guided && !cfg.include_guided) continue;

            ActionDistribution dist(params, step.features);
            PolicyParams g = logprob_grad(dist, step.action);
            double coef = returns[t] - baseline;
            if (cfg.entropy_coef > 0)
                coef -= cfg.entropy_coef * (1.0 + dist.logprob(step.action));
            grad.axpy(coef, g);
            ++stats.eligible_steps;
        }
    }

    if (stats.eligible_steps > 0) grad.scale_all(1.0 / stats.eligible_steps);
    stats.grad_norm = grad.norm();
    if (!std::isfinite(stats.grad_norm))
        throw std::runtime_error("reinforce_update: non-finite gradient (try a lower lr)");
    if (cfg.grad_clip > 0 && stats.grad_norm > cfg.grad_clip) {
        grad.scale_all(cfg.grad_clip / stats.grad_norm);
        stats.clipped = true;
    }
    params.axpy(cfg.lr, grad);

    if (rtg_count > 0)
        baseline = cfg.baseline_decay * baseline +
                   (1.0 - cfg.baseline_decay) * (rtg_sum / rtg_count);

    stats.mean_return = episodes.empty() ? 0 : return_sum / episodes.size();
    stats.mean_step_reward = steps > 0 ? reward_sum / steps : 0;
    return stats;
}

struct TrainReport {
    std::vector<double> mean_return;       // per iteration
    std::vector<double> mean_step_reward;  // per iteration
    std::vector<double> grad_norm;         // per iteration
    int clipped_updates = 0;               // iterations where the norm clip fired
};

struct TrainResult {
    PolicyParams params;
    TrainReport report;
};

/// CSV interface: iteration, mean_return, grad_norm.
inline void write_train_report_csv(const TrainReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_train_report_csv: cannot open " + path);
    out << "iteration,mean_return,grad_norm\n";
    char line[128];
    for (std::size_t i = 0; i < report.mean_return.size(); ++i) {
        std::snprintf(line, sizeof line, "%zu,%.6f,%.6f\n", i, report.mean_return[i],
                      report.grad_norm[i]);
        out << line;
    }
}

/// REINFORCE training loop. Each iteration samples `batch` scenes with
/// replacement, rolls one guided episode per pick, and applies one update.
/// Episode RNG streams are derived from (seed, iteration, slot), so results
/// do not depend on the number of rollout threads. `per_scene_weights`, when
/// nonempty, is aligned with `scenes` and replaces the 1/s object weights
/// (collaborative training).
inline TrainResult train(const std::vector<Scene>& scenes, const TrainConfig& cfg,
                         const EnvConfig& env,
                         const std::vector<std::vector<double>>& per_scene_weights = {},
                         const PolicyParams* initial = nullptr) {
    cfg.validate();
    env.zoom.validate();
    env.reward.validate();
    if (scenes.empty()) throw std::invalid_argument("train: need at least one scene");
    if (!per_scene_weights.empty() && per_scene_weights.size() != scenes.size())
        throw std::invalid_argument("train: per-scene weights misaligned");

    TrainResult result;
    result.params = initial ? *initial
                            : PolicyParams::zeros(feature_dim(), env.zoom.num_scales(),
                                                  env.zoom.num_ratios(), cfg.hidden_width);
    if (initial && (initial->n_s != env.zoom.num_scales() || initial->n_r != env.zoom.num_ratios()))
        throw std::invalid_argument("train: initial params do not match the zoom spec");

    Rng pick_rng(mix_seed(cfg.seed, hash_tag("scene-pick")));
    double baseline = 0;

    for (int it = 0; it < cfg.iterations; ++it) {
        std::vector<std::size_t> picks(static_cast<std::size_t>(cfg.batch));
        for (auto& p : picks) p = static_cast<std::size_t>(pick_rng.uniform_int(scenes.size()));

        const double eps = cfg.guidance_eps(it);
        std::vector<Episode> episodes(picks.size());
        parallel_for(picks.size(), cfg.jobs, [&](std::size_t slot) {
            Rng rng(mix_seed(cfg.seed, hash_tag("rollout"), static_cast<std::uint64_t>(it),
                             slot));
            const std::size_t s = picks[slot];
            episodes[slot] = run_episode(
                scenes[s], result.params, RolloutMode::sample, cfg.T, eps, rng, env,
                per_scene_weights.empty() ? std::span<const double>{}
                                          : std::span<const double>(per_scene_weights[s]));
        });

        const UpdateStats stats = reinforce_update(result.params, episodes, cfg, baseline);
        result.report.mean_return.push_back(stats.mean_return);
        result.report.mean_step_reward.push_back(stats.mean_step_reward);
        result.report.grad_norm.push_back(stats.grad_norm);
        result.report.clipped_updates += stats.clipped;
    }
    return result;
}

struct EvalStats {
    double mean = 0;
    double stddev = 0;
    int episodes = 0;
};

/// Mean and spread of the greedy episode return over a scene set.
inline EvalStats evaluate_policy_reward(const PolicyParams& params,
                                        const std::vector<Scene>& scenes, int T,
                                        const EnvConfig& env, int jobs = 1) {
    if (scenes.empty()) throw std::invalid_argument("evaluate_policy_reward: no scenes");
    std::vector<double> returns(scenes.size());
    parallel_for(scenes.size(), jobs, [&](std::size_t s) {
        Rng unused(0);
        returns[s] = run_episode(scenes[s], params, RolloutMode::greedy, T, 0.0, unused, env)
                         .total_return;
    });
    EvalStats stats;
    stats.episodes = static_cast<int>(returns.size());
    for (double r : returns) stats.mean += r;
    stats.mean /= stats.episodes;
    for (double r : returns) stats.stddev += (r - stats.mean) * (r - stats.mean);
    stats.stddev = std::sqrt(stats.stddev / stats.episodes);
    return stats;
}

}  // namespace adazoom
