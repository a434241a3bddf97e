#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "adazoom/env.hpp"
#include "adazoom/geometry.hpp"
#include "adazoom/rng.hpp"
#include "adazoom/scene.hpp"

namespace adazoom {

/// One focus-region action: fixation cell, scale candidate, ratio candidate.
struct Action {
    int i = 0;
    int j = 0;
    int scale = 0;
    int ratio = 0;

    bool operator==(const Action&) const = default;
};

/// Weights of the three softmax heads. With hidden_width == 0 the heads are
/// linear in the cell features; otherwise a shared tanh layer of that width
/// is applied first and the heads read the embedding.
struct PolicyParams {
    int feature_dim = 0;
    int n_s = 0;
    int n_r = 0;
    int hidden_width = 0;

    std::vector<double> w_hidden;  // hidden_width x feature_dim, row-major
    std::vector<double> theta_f;   // embed_dim
    std::vector<double> theta_s;   // n_s x embed_dim
    std::vector<double> theta_r;   // n_r x (embed_dim + n_s)

    int embed_dim() const { return hidden_width > 0 ? hidden_width : feature_dim; }
    int ratio_input_dim() const { return embed_dim() + n_s; }

    static PolicyParams zeros(int feature_dim, int n_s, int n_r, int hidden_width = 0) {
        PolicyParams p;
        p.feature_dim = feature_dim;
        p.n_s = n_s;
        p.n_r = n_r;
        p.hidden_width = hidden_width;
        p.w_hidden.assign(static_cast<std::size_t>(hidden_width) * feature_dim, 0.0);
        p.theta_f.assign(static_cast<std::size_t>(p.embed_dim()), 0.0);
        p.theta_s.assign(static_cast<std::size_t>(n_s) * p.embed_dim(), 0.0);
        p.theta_r.assign(static_cast<std::size_t>(n_r) * p.ratio_input_dim(), 0.0);
        return p;
    }

    bool same_shape(const PolicyParams& o) const {
        return feature_dim == o.feature_dim && n_s == o.n_s && n_r == o.n_r &&
               hidden_width == o.hidden_width;
    }

    /// this += a * other, per coordinate.
    void axpy(double a, const PolicyParams& o) {
        if (!same_shape(o)) throw std::invalid_argument("PolicyParams::axpy: shape mismatch");
        auto add = [a](std::vector<double>& dst, const std::vector<double>& src) {
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += a * src[i];
        };
        add(w_hidden, o.w_hidden);
        add(theta_f, o.theta_f);
        add(theta_s, o.theta_s);
        add(theta_r, o.theta_r);
    }

    void scale_all(double a) {
        for (auto* v : {&w_hidden, &theta_f, &theta_s, &theta_r})
            for (double& x : *v) x *= a;
    }

    double squared_norm() const {
        double s = 0;
        for (const auto* v : {&w_hidden, &theta_f, &theta_s, &theta_r})
            for (double x : *v) s += x * x;
        return s;
    }

    double norm() const { return std::sqrt(squared_norm()); }

    bool all_finite() const {
        for (const auto* v : {&w_hidden, &theta_f, &theta_s, &theta_r})
            for (double x : *v) if (!std::isfinite(x)) return false;
        return true;
    }
};

// ---------------------------------------------------------------------------
// Cell features
// ---------------------------------------------------------------------------

/// Feature vector length: raw channels + H, the same mean-pooled at 3x3 and
/// 7x7, plus a constant bias.
inline int feature_dim(int channels = kStateChannels) { return 3 * (channels + 1) + 1; }

/// Per-cell feature vectors for the whole grid, row-major by cell.
struct FeatureMatrix {
    GridDims grid;
    int dim = 0;
    std::vector<double> data;

    std::span<const double> at(int i, int j) const {
        return {data.data() + (static_cast<std::size_t>(i) * grid.w + j) * dim,
                static_cast<std::size_t>(dim)};
    }
    std::span<const double> at(int cell) const {
        return {data.data() + static_cast<std::size_t>(cell) * dim, static_cast<std::size_t>(dim)};
    }
};

namespace detail {

/// Summed-area table over one grid channel; window sums in O(1) per cell.
class IntegralGrid {
public:
    IntegralGrid(GridDims grid, const double* values) : grid_(grid) {
        sums_.assign(static_cast<std::size_t>(grid.h + 1) * (grid.w + 1), 0.0);
        for (int i = 0; i < grid.h; ++i)
            for (int j = 0; j < grid.w; ++j)
                at(i + 1, j + 1) = values[i * grid.w + j] + at(i, j + 1) + at(i + 1, j) - at(i, j);
    }

    /// Sum over cells in [i0,i1] x [j0,j1] clamped to the grid (zero padding).
    double window_sum(int i0, int i1, int j0, int j1) const {
        i0 = std::max(i0, 0);
        j0 = std::max(j0, 0);
        i1 = std::min(i1, grid_.h - 1);
        j1 = std::min(j1, grid_.w - 1);
        if (i0 > i1 || j0 > j1) return 0.0;
        return at(i1 + 1, j1 + 1) - at(i0, j1 + 1) - at(i1 + 1, j0) + at(i0, j0);
    }

private:
    double& at(int i, int j) { return sums_[static_cast<std::size_t>(i) * (grid_.w + 1) + j]; }
    double at(int i, int j) const {
        return sums_[static_cast<std::size_t>(i) * (grid_.w + 1) + j];
    }

    GridDims grid_;
    std::vector<double> sums_;
};

}  // namespace detail

/// Builds features for every cell: [F_0..F_C-1, H] raw, 3x3 mean pools,
/// 7x7 mean pools (zero-padded windows, always divided by 9 resp. 49), bias 1.
inline FeatureMatrix build_features(const State& state) {
    const GridDims grid = state.grid;
    const int kChannels = state.channels + 1;  // F planes plus H
    FeatureMatrix fm;
    fm.grid = grid;
    fm.dim = 3 * kChannels + 1;
    fm.data.assign(static_cast<std::size_t>(grid.cells()) * fm.dim, 0.0);

    std::vector<double> h_plane(static_cast<std::size_t>(grid.cells()));
    for (int c = 0; c < grid.cells(); ++c) h_plane[c] = static_cast<double>(state.H[c]);

    std::vector<detail::IntegralGrid> integrals;
    integrals.reserve(static_cast<std::size_t>(kChannels));
    for (int c = 0; c < state.channels; ++c)
        integrals.emplace_back(grid, state.F.data() + static_cast<std::size_t>(c) * grid.cells());
    integrals.emplace_back(grid, h_plane.data());

    for (int i = 0; i < grid.h; ++i)
        for (int j = 0; j < grid.w; ++j) {
            double* out = fm.data.data() +
                          (static_cast<std::size_t>(i) * grid.w + j) * fm.dim;
            for (int c = 0; c < state.channels; ++c) out[c] = state.f(c, i, j);
            out[state.channels] = h_plane[static_cast<std::size_t>(i) * grid.w + j];
            for (int c = 0; c < kChannels; ++c) {
                out[kChannels + c] = integrals[c].window_sum(i - 1, i + 1, j - 1, j + 1) / 9.0;
                out[2 * kChannels + c] =
                    integrals[c].window_sum(i - 3, i + 3, j - 3, j + 3) / 49.0;
            }
            out[3 * kChannels] = 1.0;
        }
    return fm;
}

/// Feature vector of a single cell; identical to build_features(state).at(i,j).
inline std::vector<double> cell_features(const State& state, int i, int j) {
    if (i < 0 || i >= state.grid.h || j < 0 || j >= state.grid.w)
        throw std::out_of_range("cell_features: cell outside grid");
    const FeatureMatrix fm = build_features(state);
    const auto row = fm.at(i, j);
    return {row.begin(), row.end()};
}

// ---------------------------------------------------------------------------
// Action distribution
// ---------------------------------------------------------------------------

namespace detail {

inline void softmax_inplace(std::vector<double>& logits) {
    double max_logit = -std::numeric_limits<double>::infinity();
    for (double v : logits) {
        if (!std::isfinite(v))
            throw std::runtime_error("policy: non-finite logits (parameters diverged)");
        max_logit = std::max(max_logit, v);
    }
    double sum = 0.0;
    for (double& v : logits) {
        v = std::exp(v - max_logit);
        sum += v;
    }
    for (double& v : logits) v /= sum;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
    return s;
}

}  // namespace detail

/// Factorized policy distribution over (a_f, a_s, a_r) for one state.
/// The fixation simplex is materialized; the conditionals are evaluated on
/// demand from the stored features.
class ActionDistribution {
public:
    ActionDistribution(const PolicyParams& params, FeatureMatrix feats)
        : params_(params), feats_(std::move(feats)) {
        if (params_.feature_dim != feats_.dim)
            throw std::invalid_argument("ActionDistribution: feature dim mismatch");
        const int cells = feats_.grid.cells();
        const int e = params_.embed_dim();

        if (params_.hidden_width > 0) {
            embed_.assign(static_cast<std::size_t>(cells) * e, 0.0);
            for (int c = 0; c < cells; ++c) {
                const auto phi = feats_.at(c);
                double* out = embed_.data() + static_cast<std::size_t>(c) * e;
                for (int u = 0; u < e; ++u)
                    out[u] = std::tanh(detail::dot(
                        {params_.w_hidden.data() + static_cast<std::size_t>(u) * params_.feature_dim,
                         static_cast<std::size_t>(params_.feature_dim)},
                        phi));
            }
        }

        p_f_.resize(static_cast<std::size_t>(cells));
        for (int c = 0; c < cells; ++c) p_f_[c] = detail::dot(params_.theta_f, embedding(c));
        detail::softmax_inplace(p_f_);
    }

    const GridDims& grid() const { return feats_.grid; }
    int num_scales() const { return params_.n_s; }
    int num_ratios() const { return params_.n_r; }
    const PolicyParams& params() const { return params_; }
    const FeatureMatrix& features() const { return feats_; }

    /// Hands the feature matrix to the caller; the distribution must not be
    /// used afterwards. Rollouts use this to stash features in episode steps
    /// without a copy.
    FeatureMatrix release_features() { return std::move(feats_); }

    /// p_f over all cells, row-major.
    const std::vector<double>& fixation() const { return p_f_; }
    double fixation_at(int i, int j) const { return p_f_[cell_index(i, j)]; }

    /// p_s(. | a_f = (i,j)).
    std::vector<double> scale_given(int i, int j) const {
        const auto emb = embedding(cell_index(i, j));
        std::vector<double> logits(static_cast<std::size_t>(params_.n_s));
        const int e = params_.embed_dim();
        for (int k = 0; k < params_.n_s; ++k)
            logits[k] = detail::dot(
                {params_.theta_s.data() + static_cast<std::size_t>(k) * e,
                 static_cast<std::size_t>(e)},
                emb);
        detail::softmax_inplace(logits);
        return logits;
    }

    /// p_r(. | a_f = (i,j), a_s = scale).
    std::vector<double> ratio_given(int i, int j, int scale) const {
        const auto emb = embedding(cell_index(i, j));
        const int e = params_.embed_dim();
        std::vector<double> logits(static_cast<std::size_t>(params_.n_r));
        for (int l = 0; l < params_.n_r; ++l) {
            const double* row = params_.theta_r.data() +
                                static_cast<std::size_t>(l) * params_.ratio_input_dim();
            logits[l] = detail::dot({row, static_cast<std::size_t>(e)}, emb) + row[e + scale];
        }
        detail::softmax_inplace(logits);
        return logits;
    }

    double logprob(const Action& a) const {
        return std::log(p_f_[cell_index(a.i, a.j)]) + std::log(scale_given(a.i, a.j)[a.scale]) +
               std::log(ratio_given(a.i, a.j, a.scale)[a.ratio]);
    }

    /// Embedded features of a cell (raw features for linear policies).
    std::span<const double> embedding(int cell) const {
        const int e = params_.embed_dim();
        if (params_.hidden_width > 0)
            return {embed_.data() + static_cast<std::size_t>(cell) * e,
                    static_cast<std::size_t>(e)};
        return feats_.at(cell);
    }

    int cell_index(int i, int j) const { return i * feats_.grid.w + j; }

private:
    PolicyParams params_;
    FeatureMatrix feats_;
    std::vector<double> embed_;
    std::vector<double> p_f_;
};

inline ActionDistribution action_distribution(const PolicyParams& params, const State& state) {
    return ActionDistribution(params, build_features(state));
}

// ---------------------------------------------------------------------------
// Sampling and greedy selection
// ---------------------------------------------------------------------------

struct SampledAction {
    Action action;
    double logprob = 0;  // always log pi of the chosen action
    bool guided = false;
};

/// Ancestral sampling with epsilon-mixed distribution guidance. With
/// probability eps the fixation is drawn from the uncovered-object-weight
/// density and the scale from the range histogram of uncovered objects under
/// each candidate footprint; the ratio always comes from the policy. The
/// returned logprob is log pi of the action either way (guided steps are
/// off-policy warm-up and are flagged so the trainer can exclude them).
inline SampledAction sample_action(const ActionDistribution& dist, const State& state,
                                   const Scene& scene, const ZoomSpec& zoom, double guidance_eps,
                                   Rng& rng, std::span<const double> weight_override = {}) {
    if (guidance_eps < 0 || guidance_eps > 1)
        throw std::invalid_argument("sample_action: guidance eps must lie in [0,1]");
    const GridDims grid = dist.grid();

    bool guided = guidance_eps > 0 && rng.uniform() < guidance_eps;
    std::vector<std::size_t> uncovered;
    if (guided) {
        for (std::size_t idx = 0; idx < scene.objects.size(); ++idx)
            if (!state.covered.count(scene.objects[idx].id)) uncovered.push_back(idx);
        if (uncovered.empty()) guided = false;  // nothing to guide toward
    }

    Action a;
    if (guided) {
        std::vector<double> density(static_cast<std::size_t>(grid.cells()), 0.0);
        const double cell_w = scene.width / grid.w;
        const double cell_h = scene.height / grid.h;
        for (std::size_t idx : uncovered) {
            const ObjectAnnotation& obj = scene.objects[idx];
            const int i = std::clamp(static_cast<int>(obj.box.cy() / cell_h), 0, grid.h - 1);
            const int j = std::clamp(static_cast<int>(obj.box.cx() / cell_w), 0, grid.w - 1);
            density[static_cast<std::size_t>(i) * grid.w + j] +=
                weight_override.empty() ? object_weight(obj) : std::max(0.0, weight_override[idx]);
        }
        const int cell = static_cast<int>(rng.sample_index(density));
        a.i = cell / grid.w;
        a.j = cell % grid.w;

        // Reference footprint per scale candidate, at the ratio nearest 1.
        int ratio_mid = 0;
        for (int l = 1; l < zoom.num_ratios(); ++l)
            if (std::abs(zoom.ratios[l] - 1.0) < std::abs(zoom.ratios[ratio_mid] - 1.0))
                ratio_mid = l;
        std::vector<double> hist(static_cast<std::size_t>(zoom.num_scales()), 0.0);
        for (int k = 0; k < zoom.num_scales(); ++k) {
            const Region probe =
                realize_region(a.i, a.j, k, ratio_mid, grid, scene.width, scene.height, zoom);
            for (std::size_t idx : uncovered) {
                const ObjectAnnotation& obj = scene.objects[idx];
                if (probe.box.contains_point(obj.box.cx(), obj.box.cy()) &&
                    zoom.ranges[k].contains(object_scale(obj)))
                    hist[k] += 1.0;
            }
        }
        double hist_total = 0;
        for (double v : hist) hist_total += v;
        a.scale = hist_total > 0
                      ? static_cast<int>(rng.sample_index(hist))
                      : static_cast<int>(rng.sample_index(dist.scale_given(a.i, a.j)));
        a.ratio = static_cast<int>(rng.sample_index(dist.ratio_given(a.i, a.j, a.scale)));
    } else {
        const int cell = static_cast<int>(rng.sample_index(dist.fixation()));
        a.i = cell / grid.w;
        a.j = cell % grid.w;
        a.scale = static_cast<int>(rng.sample_index(dist.scale_given(a.i, a.j)));
        a.ratio = static_cast<int>(rng.sample_index(dist.ratio_given(a.i, a.j, a.scale)));
    }
    return {a, dist.logprob(a), guided};
}

/// Greedy chain of Eq.-style argmaxes: fixation, then scale given the
/// fixation, then ratio given both. Ties resolve to the smallest index
/// (row-major for cells).
inline Action greedy_action(const ActionDistribution& dist) {
    const auto& p_f = dist.fixation();
    int best_cell = 0;
    for (int c = 1; c < static_cast<int>(p_f.size()); ++c)
        if (p_f[c] > p_f[best_cell]) best_cell = c;

    Action a;
    a.i = best_cell / dist.grid().w;
    a.j = best_cell % dist.grid().w;

    const auto p_s = dist.scale_given(a.i, a.j);
    a.scale = static_cast<int>(std::max_element(p_s.begin(), p_s.end()) - p_s.begin());
    const auto p_r = dist.ratio_given(a.i, a.j, a.scale);
    a.ratio = static_cast<int>(std::max_element(p_r.begin(), p_r.end()) - p_r.begin());
    return a;
}

// ---------------------------------------------------------------------------
// Analytic gradient of log pi
// ---------------------------------------------------------------------------

/// Gradient of log pi(action | state) with respect to every parameter, using
/// the softmax identity grad log softmax_k = (onehot_k - p) (x) input. With a
/// hidden layer the chain rule runs through tanh back to w_hidden.
inline PolicyParams logprob_grad(const ActionDistribution& dist, const Action& action) {
    const PolicyParams& params = dist.params();
    PolicyParams g = PolicyParams::zeros(params.feature_dim, params.n_s, params.n_r,
                                         params.hidden_width);
    const GridDims grid = dist.grid();
    const int e = params.embed_dim();
    const int d = params.feature_dim;
    const int a_cell = dist.cell_index(action.i, action.j);
    const auto& p_f = dist.fixation();
    const auto p_s = dist.scale_given(action.i, action.j);
    const auto p_r = dist.ratio_given(action.i, action.j, action.scale);
    const auto emb_f = dist.embedding(a_cell);
    const bool hidden = params.hidden_width > 0;

    // d log p / d embedding(a_f), accumulated from the scale and ratio heads;
    // the fixation head contributes per cell below.
    std::vector<double> demb(static_cast<std::size_t>(e), 0.0);

    // Fixation head: (onehot - p_f) weighted embeddings.
    for (int c = 0; c < grid.cells(); ++c) {
        const double coef = (c == a_cell ? 1.0 : 0.0) - p_f[c];
        if (coef == 0.0) continue;
        const auto emb = dist.embedding(c);
        for (int u = 0; u < e; ++u) g.theta_f[u] += coef * emb[u];
        if (hidden) {
            // Back through tanh: coef * theta_f (.) (1 - emb^2) outer phi(c).
            const auto phi = dist.features().at(c);
            for (int u = 0; u < e; ++u) {
                const double pre = coef * params.theta_f[u] * (1.0 - emb[u] * emb[u]);
                if (pre == 0.0) continue;
                double* row = g.w_hidden.data() + static_cast<std::size_t>(u) * d;
                for (int v = 0; v < d; ++v) row[v] += pre * phi[v];
            }
        }
    }

    // Scale head.
    for (int k = 0; k < params.n_s; ++k) {
        const double coef = (k == action.scale ? 1.0 : 0.0) - p_s[k];
        double* row = g.theta_s.data() + static_cast<std::size_t>(k) * e;
        const double* theta = params.theta_s.data() + static_cast<std::size_t>(k) * e;
        for (int u = 0; u < e; ++u) {
            row[u] += coef * emb_f[u];
            demb[u] += coef * theta[u];
        }
    }

    // Ratio head: input is [embedding(a_f); onehot(a_s)].
    for (int l = 0; l < params.n_r; ++l) {
        const double coef = (l == action.ratio ? 1.0 : 0.0) - p_r[l];
        double* row = g.theta_r.data() + static_cast<std::size_t>(l) * params.ratio_input_dim();
        const double* theta =
            params.theta_r.data() + static_cast<std::size_t>(l) * params.ratio_input_dim();
        for (int u = 0; u < e; ++u) {
            row[u] += coef * emb_f[u];
            demb[u] += coef * theta[u];
        }
        row[e + action.scale] += coef;
    }

    if (hidden) {
        const auto phi = dist.features().at(a_cell);
        for (int u = 0; u < e; ++u) {
            const double pre = demb[u] * (1.0 - emb_f[u] * emb_f[u]);
            if (pre == 0.0) continue;
            double* row = g.w_hidden.data() + static_cast<std::size_t>(u) * d;
            for (int v = 0; v < d; ++v) row[v] += pre * phi[v];
        }
    }
    return g;
}

inline PolicyParams logprob_grad(const PolicyParams& params, const State& state,
                                 const Action& action) {
    return logprob_grad(action_distribution(params, state), action);
}

}  // namespace adazoom
