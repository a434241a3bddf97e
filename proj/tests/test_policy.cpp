#include <doctest.h>

#include <cmath>
#include <vector>

#include "adazoom/checkpoint.hpp"
#include "adazoom/policy.hpp"

using namespace adazoom;

namespace {

State uniform_state(GridDims grid, double value) {
    State s;
    s.grid = grid;
    s.F.assign(static_cast<std::size_t>(kStateChannels) * grid.cells(), value);
    s.H.assign(static_cast<std::size_t>(grid.cells()), 0);
    return s;
}

Scene two_object_scene() {
    Scene scene;
    scene.width = scene.height = 256;
    scene.objects = {{{40, 40, 20, 20}, 1, 0}, {{180, 180, 30, 30}, 1, 1}};
    return scene;
}

PolicyParams random_params(int d, int n_s, int n_r, int hidden, Rng& rng) {
    PolicyParams p = PolicyParams::zeros(d, n_s, n_r, hidden);
    for (auto* vec : {&p.w_hidden, &p.theta_f, &p.theta_s, &p.theta_r})
        for (double& x : *vec) x = rng.uniform(-0.5, 0.5);
    return p;
}

std::vector<double*> coords(PolicyParams& p) {
    std::vector<double*> out;
    for (auto* vec : {&p.w_hidden, &p.theta_f, &p.theta_s, &p.theta_r})
        for (double& x : *vec) out.push_back(&x);
    return out;
}

std::vector<double> flat(const PolicyParams& p) {
    std::vector<double> out;
    for (const auto* vec : {&p.w_hidden, &p.theta_f, &p.theta_s, &p.theta_r})
        out.insert(out.end(), vec->begin(), vec->end());
    return out;
}

double joint_probability(const ActionDistribution& dist, const Action& a) {
    return dist.fixation()[dist.cell_index(a.i, a.j)] * dist.scale_given(a.i, a.j)[a.scale] *
           dist.ratio_given(a.i, a.j, a.scale)[a.ratio];
}

}  // namespace

TEST_CASE("cell_features") {
    SUBCASE("all-zero state is bias only") {
        const State s = uniform_state({8, 8}, 0.0);
        const auto phi = cell_features(s, 4, 4);
        REQUIRE(static_cast<int>(phi.size()) == feature_dim());
        for (std::size_t k = 0; k + 1 < phi.size(); ++k) CHECK(phi[k] == 0.0);
        CHECK(phi.back() == 1.0);
    }
    SUBCASE("constant grid pools to the constant away from borders") {
        const State s = uniform_state({8, 8}, 0.25);
        const auto phi = cell_features(s, 3, 3);
        for (int c = 0; c < kStateChannels; ++c) {
            CHECK(phi[c] == doctest::Approx(0.25));                          // raw
            CHECK(phi[kStateChannels + 1 + c] == doctest::Approx(0.25));     // 3x3
            CHECK(phi[2 * (kStateChannels + 1) + c] == doctest::Approx(0.25));  // 7x7
        }
    }
    SUBCASE("zero padding shows up at the border") {
        const State s = uniform_state({8, 8}, 0.9);
        const auto corner = cell_features(s, 0, 0);
        // 3x3 window at the corner sees 4 of 9 cells.
        CHECK(corner[kStateChannels + 1] == doctest::Approx(0.9 * 4.0 / 9.0));
        // 7x7 window sees 16 of 49.
        CHECK(corner[2 * (kStateChannels + 1)] == doctest::Approx(0.9 * 16.0 / 49.0));
    }
    SUBCASE("single-cell view matches the bulk build") {
        const ZoomSpec zoom;
        const State s = init_state(two_object_scene(), {8, 8}, zoom);
        const FeatureMatrix fm = build_features(s);
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j) {
                const auto phi = cell_features(s, i, j);
                const auto row = fm.at(i, j);
                REQUIRE(phi.size() == row.size());
                for (std::size_t k = 0; k < phi.size(); ++k)
                    CHECK(phi[k] == doctest::Approx(row[k]).epsilon(1e-12));
            }
    }
}

TEST_CASE("action_distribution") {
    const ZoomSpec zoom;
    const State state = init_state(two_object_scene(), {4, 4}, zoom);

    SUBCASE("zero parameters give uniform heads") {
        const PolicyParams p = PolicyParams::zeros(feature_dim(), 3, 3);
        const ActionDistribution dist = action_distribution(p, state);
        for (double v : dist.fixation()) CHECK(v == doctest::Approx(1.0 / 16.0));
        for (double v : dist.scale_given(1, 2)) CHECK(v == doctest::Approx(1.0 / 3.0));
        for (double v : dist.ratio_given(1, 2, 0)) CHECK(v == doctest::Approx(1.0 / 3.0));
    }
    SUBCASE("simplices sum to one for arbitrary parameters") {
        Rng rng(17);
        for (int trial = 0; trial < 20; ++trial) {
            const PolicyParams p = random_params(feature_dim(), 3, 3, trial % 2 ? 8 : 0, rng);
            const ActionDistribution dist = action_distribution(p, state);
            double sum_f = 0;
            for (double v : dist.fixation()) {
                CHECK(v > 0.0);
                sum_f += v;
            }
            CHECK(std::abs(sum_f - 1.0) <= 1e-6);
            for (int cell = 0; cell < 16; ++cell) {
                double sum_s = 0;
                for (double v : dist.scale_given(cell / 4, cell % 4)) sum_s += v;
                CHECK(std::abs(sum_s - 1.0) <= 1e-6);
                for (int k = 0; k < 3; ++k) {
                    double sum_r = 0;
                    for (double v : dist.ratio_given(cell / 4, cell % 4, k)) sum_r += v;
                    CHECK(std::abs(sum_r - 1.0) <= 1e-6);
                }
            }
        }
    }
    SUBCASE("joint probabilities sum to one by exhaustive enumeration") {
        Rng rng(23);
        const PolicyParams p = random_params(feature_dim(), 3, 3, 0, rng);
        const ActionDistribution dist = action_distribution(p, state);
        double total = 0;
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j)
                for (int k = 0; k < 3; ++k)
                    for (int l = 0; l < 3; ++l) total += joint_probability(dist, {i, j, k, l});
        CHECK(std::abs(total - 1.0) <= 1e-6);
    }
    SUBCASE("adding a constant to all fixation logits changes nothing") {
        Rng rng(29);
        PolicyParams p = random_params(feature_dim(), 3, 3, 0, rng);
        const ActionDistribution before = action_distribution(p, state);
        p.theta_f.back() += 5.0;  // bias feature is 1 everywhere
        const ActionDistribution after = action_distribution(p, state);
        for (std::size_t c = 0; c < before.fixation().size(); ++c)
            CHECK(after.fixation()[c] == doctest::Approx(before.fixation()[c]).epsilon(1e-12));
    }
    SUBCASE("non-finite logits are rejected") {
        PolicyParams p = PolicyParams::zeros(feature_dim(), 3, 3);
        p.theta_f[0] = std::numeric_limits<double>::infinity();
        CHECK_THROWS_AS(action_distribution(p, state), std::runtime_error);
    }
}

TEST_CASE("sample_action") {
    const ZoomSpec zoom;
    const Scene scene = two_object_scene();
    const State state = init_state(scene, {4, 4}, zoom);
    const PolicyParams p = PolicyParams::zeros(feature_dim(), 3, 3);
    const ActionDistribution dist = action_distribution(p, state);

    SUBCASE("logprob is the sum of the factor logs") {
        Rng rng(1);
        for (int trial = 0; trial < 50; ++trial) {
            const SampledAction s = sample_action(dist, state, scene, zoom, 0.0, rng);
            CHECK(!s.guided);
            const Action& a = s.action;
            const double expected = std::log(dist.fixation()[dist.cell_index(a.i, a.j)]) +
                                    std::log(dist.scale_given(a.i, a.j)[a.scale]) +
                                    std::log(dist.ratio_given(a.i, a.j, a.scale)[a.ratio]);
            CHECK(s.logprob == doctest::Approx(expected).epsilon(1e-12));
            CHECK(std::isfinite(s.logprob));
        }
    }
    SUBCASE("full guidance with one uncovered object fixates its cell") {
        Scene one;
        one.width = one.height = 256;
        one.objects = {{{150, 90, 20, 20}, 1, 0}};  // center (160, 100) -> cell i=1, j=2
        const State s1 = init_state(one, {4, 4}, zoom);
        const ActionDistribution d1 = action_distribution(p, s1);
        Rng rng(2);
        for (int trial = 0; trial < 20; ++trial) {
            const SampledAction s = sample_action(d1, s1, one, zoom, 1.0, rng);
            CHECK(s.guided);
            CHECK(s.action.i == 1);
            CHECK(s.action.j == 2);
        }
    }
    SUBCASE("guidance on an empty scene falls back to the policy") {
        Scene empty;
        empty.width = empty.height = 256;
        const State se = init_state(empty, {4, 4}, zoom);
        const ActionDistribution de = action_distribution(p, se);
        Rng rng(3);
        const SampledAction s = sample_action(de, se, empty, zoom, 1.0, rng);
        CHECK(!s.guided);
    }
}

TEST_CASE("greedy_action") {
    const ZoomSpec zoom;
    const State state = init_state(two_object_scene(), {2, 2}, zoom);

    SUBCASE("uniform ties resolve to the first indices") {
        const PolicyParams p = PolicyParams::zeros(feature_dim(), 3, 3);
        const Action a = greedy_action(action_distribution(p, state));
        CHECK(a == Action{0, 0, 0, 0});
    }
    SUBCASE("greedy follows the argmax chain") {
        Rng rng(31);
        for (int trial = 0; trial < 20; ++trial) {
            const PolicyParams p = random_params(feature_dim(), 3, 3, 0, rng);
            const ActionDistribution dist = action_distribution(p, state);
            const Action a = greedy_action(dist);
            const auto& pf = dist.fixation();
            for (double v : pf) CHECK(pf[dist.cell_index(a.i, a.j)] >= v);
            const auto ps = dist.scale_given(a.i, a.j);
            for (double v : ps) CHECK(ps[a.scale] >= v);
            const auto pr = dist.ratio_given(a.i, a.j, a.scale);
            for (double v : pr) CHECK(pr[a.ratio] >= v);
        }
    }
    SUBCASE("greedy can miss the joint argmax; independent heads cannot") {
        Rng rng(37);
        bool found_counterexample = false;
        for (int trial = 0; trial < 500 && !found_counterexample; ++trial) {
            const PolicyParams p = random_params(feature_dim(), 3, 3, 0, rng);
            const ActionDistribution dist = action_distribution(p, state);
            const Action g = greedy_action(dist);
            Action best{0, 0, 0, 0};
            double best_prob = -1;
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j)
                    for (int k = 0; k < 3; ++k)
                        for (int l = 0; l < 3; ++l) {
                            const double prob = joint_probability(dist, {i, j, k, l});
                            if (prob > best_prob) {
                                best_prob = prob;
                                best = {i, j, k, l};
                            }
                        }
            if (!(g == best)) {
                found_counterexample = true;
                CHECK(joint_probability(dist, g) < best_prob);
            }
        }
        CHECK(found_counterexample);

        // Heads blind to everything but the bias cannot disagree with the
        // joint argmax.
        Rng rng2(41);
        for (int trial = 0; trial < 20; ++trial) {
            PolicyParams p = PolicyParams::zeros(feature_dim(), 3, 3);
            const int e = p.embed_dim();
            for (int u = 0; u < e; ++u) p.theta_f[u] = rng2.uniform(-1, 1);
            for (int k = 0; k < 3; ++k) p.theta_s[k * e + e - 1] = rng2.uniform(-1, 1);
            for (int l = 0; l < 3; ++l) p.theta_r[l * p.ratio_input_dim() + e - 1] =
                rng2.uniform(-1, 1);
            const ActionDistribution dist = action_distribution(p, state);
            const Action g = greedy_action(dist);
            double best_prob = -1;
            Action best{0, 0, 0, 0};
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j)
                    for (int k = 0; k < 3; ++k)
                        for (int l = 0; l < 3; ++l) {
                            const double prob = joint_probability(dist, {i, j, k, l});
                            if (prob > best_prob) {
                                best_prob = prob;
                                best = {i, j, k, l};
                            }
                        }
            CHECK(g == best);
        }
    }
}

TEST_CASE("logprob_grad") {
    const ZoomSpec zoom;
    const State state = init_state(two_object_scene(), {4, 4}, zoom);

    SUBCASE("zero parameters reproduce the softmax identity") {
        const PolicyParams p = PolicyParams::zeros(feature_dim(), 3, 3);
        const Action a{1, 2, 1, 0};
        const PolicyParams g = logprob_grad(p, state, a);
        const auto phi = cell_features(state, 1, 2);
        const int e = p.embed_dim();
        for (int k = 0; k < 3; ++k) {
            const double coef = (k == a.scale ? 1.0 : 0.0) - 1.0 / 3.0;
            for (int u = 0; u < e; ++u)
                CHECK(g.theta_s[k * e + u] == doctest::Approx(coef * phi[u]).epsilon(1e-12));
        }
    }
    SUBCASE("simplex direction sums to zero per input coordinate") {
        Rng rng(43);
        const PolicyParams p = random_params(feature_dim(), 3, 3, 0, rng);
        const PolicyParams g = logprob_grad(p, state, {0, 3, 2, 1});
        const int e = p.embed_dim();
        for (int u = 0; u < e; ++u) {
            double sum = 0;
            for (int k = 0; k < 3; ++k) sum += g.theta_s[k * e + u];
            CHECK(std::abs(sum) <= 1e-12);
        }
    }
    SUBCASE("matches central finite differences") {
        Rng rng(47);
        for (int hidden : {0, 8}) {
            PolicyParams p = random_params(feature_dim(), 3, 3, hidden, rng);
            const Action a{2, 1, 1, 2};
            const PolicyParams analytic = logprob_grad(p, state, a);
            const std::vector<double> an = flat(analytic);
            const auto param_ptrs = coords(p);
            REQUIRE(param_ptrs.size() == an.size());
            const double h = 1e-5;
            for (std::size_t c = 0; c < param_ptrs.size(); ++c) {
                const double saved = *param_ptrs[c];
                *param_ptrs[c] = saved + h;
                const double plus = action_distribution(p, state).logprob(a);
                *param_ptrs[c] = saved - h;
                const double minus = action_distribution(p, state).logprob(a);
                *param_ptrs[c] = saved;
                const double fd = (plus - minus) / (2 * h);
                const double denom = std::max({std::abs(fd), std::abs(an[c]), 1e-6});
                CHECK(std::abs(fd - an[c]) / denom <= 1e-4);
            }
        }
    }
}

TEST_CASE("checkpoint round trip and rejection") {
    const ZoomSpec zoom;
    Rng rng(53);
    Checkpoint ckpt;
    ckpt.grid = {16, 16};
    ckpt.zoom = zoom;
    ckpt.params = random_params(feature_dim(), zoom.num_scales(), zoom.num_ratios(), 0, rng);

    const auto path =
        (std::filesystem::temp_directory_path() / "adazoom_ckpt_test.json").string();
    save_checkpoint(ckpt, path);
    const Checkpoint loaded = load_checkpoint(path);
    CHECK(loaded.grid == ckpt.grid);
    CHECK(loaded.zoom == ckpt.zoom);
    CHECK(flat(loaded.params) == flat(ckpt.params));

    SUBCASE("dimension mismatches are rejected") {
        nlohmann::json doc = checkpoint_to_json(ckpt);
        doc["policy"]["theta_f"].erase(0);
        CHECK_THROWS_AS(checkpoint_from_json(doc), std::runtime_error);

        nlohmann::json doc2 = checkpoint_to_json(ckpt);
        doc2["policy"]["n_s"] = 5;
        CHECK_THROWS_AS(checkpoint_from_json(doc2), std::runtime_error);
    }
    SUBCASE("unsupported versions are rejected") {
        nlohmann::json doc = checkpoint_to_json(ckpt);
        doc["version"] = 999;
        CHECK_THROWS_AS(checkpoint_from_json(doc), std::runtime_error);
    }
}
