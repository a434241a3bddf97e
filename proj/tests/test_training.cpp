#include <doctest.h>

#include <cmath>
#include <vector>

#include "adazoom/training.hpp"

using namespace adazoom;

namespace {

std::vector<double> flat(const PolicyParams& p) {
    std::vector<double> out;
    for (const auto* vec : {&p.w_hidden, &p.theta_f, &p.theta_s, &p.theta_r})
        out.insert(out.end(), vec->begin(), vec->end());
    return out;
}

EnvConfig tiny_env() {
    EnvConfig env;
    env.grid = {8, 8};
    return env;
}

std::vector<Scene> tiny_scenes(int count) {
    std::vector<Scene> scenes;
    for (int i = 0; i < count; ++i) {
        SynthSceneConfig cfg;
        cfg.width = cfg.height = 512;
        cfg.clusters = 2;
        cfg.objects_per_cluster = 6;
        cfg.large_scatter_fraction = 0.1;
        cfg.seed = 100 + static_cast<std::uint64_t>(i);
        scenes.push_back(synth_scene(cfg));
    }
    return scenes;
}

Episode one_step_episode(const Scene& scene, const EnvConfig& env, const PolicyParams& params,
                         double reward_value) {
    const State state = init_state(scene, env.grid, env.zoom);
    ActionDistribution dist = action_distribution(params, state);
    EpisodeStep step;
    step.action = {1, 1, 0, 0};
    step.logprob = dist.logprob(step.action);
    step.reward = reward_value;
    step.features = dist.release_features();
    Episode ep;
    ep.total_return = reward_value;
    ep.steps.push_back(std::move(step));
    return ep;
}

}  // namespace

TEST_CASE("reinforce_update") {
    const EnvConfig env = tiny_env();
    const auto scenes = tiny_scenes(1);
    TrainConfig cfg;
    cfg.lr = 0.05;
    cfg.grad_clip = 0;

    SUBCASE("zero rewards leave the parameters untouched") {
        PolicyParams params = PolicyParams::zeros(feature_dim(), 3, 3);
        const auto before = flat(params);
        double baseline = 0;
        std::vector<Episode> eps;
        eps.push_back(one_step_episode(scenes[0], env, params, 0.0));
        reinforce_update(params, eps, cfg, baseline);
        CHECK(flat(params) == before);
    }
    SUBCASE("a single unit-return step moves by lr * grad log pi") {
        PolicyParams params = PolicyParams::zeros(feature_dim(), 3, 3);
        double baseline = 0;
        std::vector<Episode> eps;
        eps.push_back(one_step_episode(scenes[0], env, params, 1.0));
        const State state = init_state(scenes[0], env.grid, env.zoom);
        const PolicyParams expected_grad = logprob_grad(params, state, {1, 1, 0, 0});
        reinforce_update(params, eps, cfg, baseline);
        const auto got = flat(params);
        const auto want = flat(expected_grad);
        REQUIRE(got.size() == want.size());
        for (std::size_t c = 0; c < got.size(); ++c)
            CHECK(got[c] == doctest::Approx(cfg.lr * want[c]).epsilon(1e-12));
        CHECK(baseline == doctest::Approx((1.0 - cfg.baseline_decay) * 1.0));
    }
    SUBCASE("gradient clipping caps the step") {
        PolicyParams params = PolicyParams::zeros(feature_dim(), 3, 3);
        TrainConfig clip_cfg = cfg;
        clip_cfg.grad_clip = 1e-3;
        double baseline = 0;
        std::vector<Episode> eps;
        eps.push_back(one_step_episode(scenes[0], env, params, 1.0));
        const auto stats = reinforce_update(params, eps, clip_cfg, baseline);
        CHECK(stats.clipped);
        PolicyParams step = params;  // params started at zero, so params == lr * clipped grad
        CHECK(step.norm() == doctest::Approx(clip_cfg.lr * clip_cfg.grad_clip).epsilon(1e-9));
    }
    SUBCASE("an entropy bonus changes the step and stays finite") {
        PolicyParams plain = PolicyParams::zeros(feature_dim(), 3, 3);
        PolicyParams bonused = plain;
        double b1 = 0, b2 = 0;
        std::vector<Episode> eps;
        eps.push_back(one_step_episode(scenes[0], env, plain, 1.0));
        reinforce_update(plain, eps, cfg, b1);
        TrainConfig ent = cfg;
        ent.entropy_coef = 0.1;
        reinforce_update(bonused, eps, ent, b2);
        CHECK(flat(plain) != flat(bonused));
        CHECK(bonused.all_finite());
    }
    SUBCASE("guided steps are excluded unless configured in") {
        PolicyParams params = PolicyParams::zeros(feature_dim(), 3, 3);
        double baseline = 0;
        std::vector<Episode> eps;
        eps.push_back(one_step_episode(scenes[0], env, params, 1.0));
        eps[0].steps[0].guided = true;
        const auto before = flat(params);
        auto stats = reinforce_update(params, eps, cfg, baseline);
        CHECK(stats.eligible_steps == 0);
        CHECK(flat(params) == before);

        TrainConfig inc = cfg;
        inc.include_guided = true;
        stats = reinforce_update(params, eps, inc, baseline);
        CHECK(stats.eligible_steps == 1);
        CHECK(flat(params) != before);
    }
}

TEST_CASE("train") {
    const EnvConfig env = tiny_env();
    const auto scenes = tiny_scenes(3);
    TrainConfig cfg;
    cfg.batch = 4;
    cfg.iterations = 4;
    cfg.T = 3;
    cfg.seed = 7;

    SUBCASE("zero iterations change nothing") {
        TrainConfig none = cfg;
        none.iterations = 0;
        const TrainResult r = train(scenes, none, env);
        CHECK(r.params.norm() == 0.0);
        CHECK(r.report.mean_return.empty());
    }
    SUBCASE("bit-identical given the seed, different otherwise") {
        const TrainResult a = train(scenes, cfg, env);
        const TrainResult b = train(scenes, cfg, env);
        CHECK(flat(a.params) == flat(b.params));
        CHECK(a.report.mean_return == b.report.mean_return);
        CHECK(a.report.grad_norm == b.report.grad_norm);

        TrainConfig other = cfg;
        other.seed = 8;
        CHECK(flat(train(scenes, other, env).params) != flat(a.params));
    }
    SUBCASE("rollout threads do not change the result") {
        TrainConfig jobs2 = cfg;
        jobs2.jobs = 2;
        CHECK(flat(train(scenes, cfg, env).params) == flat(train(scenes, jobs2, env).params));
    }
    SUBCASE("all-zero collaborative weights freeze the policy") {
        std::vector<std::vector<double>> weights(scenes.size());
        for (std::size_t s = 0; s < scenes.size(); ++s)
            weights[s].assign(scenes[s].objects.size(), 0.0);
        const TrainResult r = train(scenes, cfg, env, weights);
        CHECK(r.params.norm() == 0.0);
    }
    SUBCASE("report lengths equal the iteration count") {
        const TrainResult r = train(scenes, cfg, env);
        CHECK(r.report.mean_return.size() == 4);
        CHECK(r.report.mean_step_reward.size() == 4);
        CHECK(r.report.grad_norm.size() == 4);
    }
}

TEST_CASE("evaluate_policy_reward") {
    const EnvConfig env = tiny_env();
    const PolicyParams uniform = PolicyParams::zeros(feature_dim(), 3, 3);

    SUBCASE("no scenes is an error") {
        CHECK_THROWS_AS(evaluate_policy_reward(uniform, {}, 3, env), std::invalid_argument);
    }
    SUBCASE("a single scene has zero spread") {
        const auto stats = evaluate_policy_reward(uniform, tiny_scenes(1), 3, env);
        CHECK(stats.episodes == 1);
        CHECK(stats.stddev == 0.0);
    }
    SUBCASE("aggregation ignores scene order") {
        auto scenes = tiny_scenes(4);
        const auto a = evaluate_policy_reward(uniform, scenes, 3, env);
        std::reverse(scenes.begin(), scenes.end());
        const auto b = evaluate_policy_reward(uniform, scenes, 3, env);
        CHECK(a.mean == doctest::Approx(b.mean).epsilon(1e-12));
        CHECK(a.stddev == doctest::Approx(b.stddev).epsilon(1e-12));
    }
}

TEST_CASE("guidance schedule anneals linearly over the first half") {
    TrainConfig cfg;
    cfg.iterations = 100;
    cfg.eps_start = 0.5;
    cfg.eps_end = 0.0;
    cfg.eps_anneal_frac = 0.5;
    CHECK(cfg.guidance_eps(0) == doctest::Approx(0.5));
    CHECK(cfg.guidance_eps(25) == doctest::Approx(0.25));
    CHECK(cfg.guidance_eps(50) == doctest::Approx(0.0));
    CHECK(cfg.guidance_eps(99) == doctest::Approx(0.0));
}
