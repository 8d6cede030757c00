#include "hug/trainer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace hug {
namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-15;

struct AdamStep {
    double lr;
    double bias1;
    double bias2;

    void operator()(double& param, double& m, double& v, double g) const {
        m = kBeta1 * m + (1.0 - kBeta1) * g;
        v = kBeta2 * v + (1.0 - kBeta2) * g * g;
        param -= lr * (m / bias1) / (std::sqrt(v / bias2) + kAdamEps);
    }
};

AdamStep adam_for(double lr, std::int64_t step) {
    return AdamStep{lr, 1.0 - std::pow(kBeta1, static_cast<double>(step)),
                    1.0 - std::pow(kBeta2, static_cast<double>(step))};
}

AnchorMoments& moments_for(TrainState& state, const Anchor& a) {
    auto [it, inserted] = state.anchor_moments.try_emplace(a.id);
    if (inserted) {
        auto& m = it->second;
        m.m_feature = m.v_feature = VecX::Zero(a.feature.size());
        m.m_offsets.assign(a.offsets.size(), Vec3::Zero());
        m.v_offsets.assign(a.offsets.size(), Vec3::Zero());
    }
    return it->second;
}

void update_anchor(TrainState& state, Anchor& a, const AnchorGrad& g, const PipelineConfig& cfg) {
    auto& m = moments_for(state, a);
    ++m.steps;
    const AdamStep feat = adam_for(cfg.lr_features, m.steps);
    for (Eigen::Index f = 0; f < a.feature.size(); ++f) feat(a.feature[f], m.m_feature[f], m.v_feature[f], g.feature[f]);
    const AdamStep off = adam_for(cfg.lr_offsets, m.steps);
    for (std::size_t k = 0; k < a.offsets.size(); ++k)
        for (int c = 0; c < 3; ++c) off(a.offsets[k][c], m.m_offsets[k][c], m.v_offsets[k][c], g.offsets[k][c]);
    // Scaling is optimised in log space to stay positive. Applying the step as a
    // factor keeps a zero step exact.
    const AdamStep sc = adam_for(cfg.lr_scaling, m.steps);
    for (int c = 0; c < 3; ++c) {
        double delta = 0.0;
        sc(delta, m.m_log_scaling[c], m.v_log_scaling[c], g.scaling[c] * a.scaling[c]);
        a.scaling[c] *= std::exp(delta);
    }
}

void update_decoder(TrainState& state, const DecoderWeights& grad, const PipelineConfig& cfg) {
    ++state.decoder_steps;
    const AdamStep step = adam_for(cfg.lr_decoder, state.decoder_steps);
    std::vector<std::span<double>> params, ms, vs;
    std::vector<std::span<const double>> gs;
    state.model.weights.for_each_param([&](std::span<double> p) { params.push_back(p); });
    state.m_decoder.for_each_param([&](std::span<double> p) { ms.push_back(p); });
    state.v_decoder.for_each_param([&](std::span<double> p) { vs.push_back(p); });
    grad.for_each_param([&](std::span<const double> p) { gs.push_back(p); });
    for (std::size_t n = 0; n < params.size(); ++n)
        for (std::size_t i = 0; i < params[n].size(); ++i) step(params[n][i], ms[n][i], vs[n][i], gs[n][i]);
}

void check_finite(const TrainState& state) {
    bool ok = true;
    state.model.weights.for_each_param([&](std::span<const double> p) {
        for (double v : p) ok = ok && std::isfinite(v);
    });
    for (const auto& a : state.model.anchors.anchors) {
        ok = ok && a.feature.allFinite() && a.scaling.allFinite();
        for (const auto& o : a.offsets) ok = ok && o.allFinite();
    }
    if (!ok)
        throw Error("non-finite parameter after iteration " + std::to_string(state.iteration) + " in block " +
                    to_string(state.model.block_id));
}

std::uint64_t block_seed(std::uint64_t seed, BlockId b) {
    const auto linear = static_cast<std::uint64_t>(b.j) * 65536u + static_cast<std::uint64_t>(b.i) + 1u;
    return seed ^ (0x9E3779B97F4A7C15ull * linear);
}

// Fisher-Yates with the library's own uniform draw, so the order is portable.
void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
        std::swap(v[i - 1], v[std::min(j, i - 1)]);
    }
}

}  // namespace

TrainState init_train_state(const SceneBundle& bundle, const BlockData& block, const BlockGrid& grid,
                            const PipelineConfig& cfg) {
    if (block.points.empty()) throw ContractError("block " + to_string(block.block_id) + " has no points");
    std::vector<CameraView> views;
    for (int id : block.assigned_views) {
        const CameraView* v = bundle.find_view(id);
        if (!v) throw ContractError("block " + to_string(block.block_id) + " references unknown view");
        views.push_back(*v);
    }
    if (views.empty()) views = bundle.views;
    TrainState state;
    auto& m = state.model;
    m.block_id = block.block_id;
    m.bounds_min = grid.cell_min(block.block_id);
    m.bounds_max = grid.cell_max(block.block_id);
    m.ctx = compute_lod_context(block.points, views);
    std::vector<Vec3> positions;
    positions.reserve(block.points.size());
    for (const auto& p : block.points) positions.push_back(p.position);
    const std::uint64_t seed = block_seed(cfg.seed, block.block_id);
    m.anchors = init_anchors(positions, m.ctx, block.block_id, cfg.feature_dim, cfg.k_off, seed);
    m.weights = init_weights(cfg.seed, cfg.feature_dim, cfg.hidden_dim, cfg.k_off, block.block_id, m.ctx.d_max);
    state.m_decoder = m.weights.zeros_like();
    state.v_decoder = m.weights.zeros_like();
    state.rng.seed(seed + 1);
    return state;
}

StepReport train_step(TrainState& state, const CameraView& view, const Bitmap& block_mask, const BlockData& block,
                      const PipelineConfig& cfg) {
    if (std::find(block.assigned_views.begin(), block.assigned_views.end(), view.id) == block.assigned_views.end())
        throw ContractError("train_step: view " + std::to_string(view.id) + " is not assigned to block " +
                            to_string(block.block_id));
    if (!view.pixels) throw ContractError("train_step: view " + std::to_string(view.id) + " has no image");
    const Image& gt = *view.pixels;
    const RenderSettings settings = RenderSettings::from_config(cfg);
    auto& model = state.model;
    auto& anchors = model.anchors.anchors;
    const int K = model.anchors.K;
    const int k_off = model.weights.k_off;

    StepReport report;
    report.tau_g = dynamic_threshold(state.iteration, cfg.tau_g0, cfg.eta, cfg.window_M);

    const DecodedView dv = decode_view(model, view, cfg.guard_band);
    const std::size_t n = dv.gaussians.size();
    const RenderPass full = render(dv.gaussians, dv.ids, view, settings);

    // Per-level renders R_{K-k}: Gaussians of anchors whose level is exactly K-k.
    std::vector<std::vector<std::size_t>> members(K);
    for (std::size_t s = 0; s < dv.selected.size(); ++s) {
        const int level = anchors[dv.selected[s]].effective_level(K);
        for (int slot = 0; slot < k_off; ++slot) members[level].push_back(s * k_off + slot);
    }
    std::vector<std::vector<Gaussian3D>> level_gaussians(K);
    std::vector<RenderPass> level_passes(K);
    std::vector<LevelRender> level_renders(K);
    for (int k = 1; k <= K; ++k) {
        const int level = K - k;
        std::vector<std::uint64_t> ids;
        for (std::size_t g : members[level]) {
            level_gaussians[k - 1].push_back(dv.gaussians[g]);
            ids.push_back(dv.ids[g]);
        }
        level_passes[k - 1] = render(level_gaussians[k - 1], ids, view, settings);
        level_renders[k - 1].image = &level_passes[k - 1].fb.rgb;
        level_renders[k - 1].opacity_mask = extract_opacity_mask(level_passes[k - 1].fb, cfg.opacity_mask_threshold);
    }

    HierarchicalGrads hg;
    report.loss = hierarchical_loss(gt, full.fb.rgb, level_renders, block_mask, cfg.lambda, cfg.gamma, cfg.theta, K,
                                    &hg);

    std::vector<Gaussian3DGrad> ggrad(n);
    std::vector<Vec2> mean2(n, Vec2::Zero());
    {
        const RenderGrads rg = render_backward(dv.gaussians, full, view, hg.full, settings);
        for (std::size_t g = 0; g < n; ++g) {
            ggrad[g] += rg.gaussians[g];
            mean2[g] += rg.mean2[g];
        }
    }
    for (int k = 1; k <= K; ++k) {
        const auto& idx = members[K - k];
        if (idx.empty()) continue;
        const RenderGrads rg =
            render_backward(level_gaussians[k - 1], level_passes[k - 1], view, hg.levels[k - 1], settings);
        for (std::size_t m = 0; m < idx.size(); ++m) {
            ggrad[idx[m]] += rg.gaussians[m];
            mean2[idx[m]] += rg.mean2[m];
        }
    }

    DecoderWeights wgrad = model.weights.zeros_like();
    const Vec3 center = view.center();
    for (std::size_t s = 0; s < dv.selected.size(); ++s) {
        Anchor& a = anchors[dv.selected[s]];
        const std::span<const Gaussian3DGrad> up(ggrad.data() + s * k_off, k_off);
        const AnchorGrad ag = decoder_backward(a, center, model.weights, up, wgrad);
        double delta_g = 0;
        for (int slot = 0; slot < k_off; ++slot) delta_g += mean2[s * k_off + slot].norm();
        record_gradient(a, delta_g / k_off, cfg.beta, report.tau_g);
        update_anchor(state, a, ag, cfg);
    }
    record_visibility(model.anchors, dv.selected);
    update_decoder(state, wgrad, cfg);

    ++state.iteration;
    check_finite(state);
    state.loss_history.push_back(report.loss.total);
    report.anchors = anchors.size();
    report.selected = dv.selected.size();
    return report;
}

void lifecycle_pass(TrainState& state, const PipelineConfig& cfg) {
    auto& set = state.model.anchors;
    const double tau = dynamic_threshold(std::max<std::int64_t>(state.iteration - 1, 0), cfg.tau_g0, cfg.eta,
                                         cfg.window_M);
    // Pruning first: fresh children have not had a window to gather visibility.
    prune_by_visibility(set, cfg.eps_c);
    split_anchors(set, state.model.ctx, tau, state.rng);
    transition_levels(set, cfg.level_step);
    std::erase_if(state.anchor_moments, [&](const auto& kv) {
        return std::none_of(set.anchors.begin(), set.anchors.end(), [&](const Anchor& a) { return a.id == kv.first; });
    });
    ++state.lifecycle_passes;
}

TrainState train_block_state(const SceneBundle& bundle, const BlockData& block, const BlockGrid& grid,
                             const PipelineConfig& cfg, const TrainCallbacks& callbacks) {
    cfg.validate();
    if (block.assigned_views.empty())
        throw ContractError("block " + to_string(block.block_id) + " has no assigned training views");
    TrainState state = init_train_state(bundle, block, grid, cfg);

    std::vector<const CameraView*> views;
    std::vector<Bitmap> masks;
    for (std::size_t n = 0; n < block.assigned_views.size(); ++n) {
        const CameraView* v = bundle.find_view(block.assigned_views[n]);
        views.push_back(v);
        if (n < block.masks.size() && block.masks[n].view_id == v->id)
            masks.push_back(block.masks[n].bitmap);
        else
            masks.push_back(build_visibility_mask(block, *v, cfg.mask_cell_px, cfg.mask_dilation_px).bitmap);
    }

    std::vector<std::size_t> order(views.size());
    std::size_t cursor = order.size();
    for (int it = 0; it < cfg.iterations; ++it) {
        if (cursor == order.size()) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            shuffle(order, state.rng);
            cursor = 0;
        }
        const std::size_t v = order[cursor++];
        const StepReport report = train_step(state, *views[v], masks[v], block, cfg);
        if (callbacks.on_metrics) callbacks.on_metrics(metrics_record(block.block_id, state.iteration - 1, views[v]->id, report));
        if (state.iteration % cfg.window_M == 0) {
            lifecycle_pass(state, cfg);
            if (callbacks.on_checkpoint) callbacks.on_checkpoint(state);
        }
    }
    return state;
}

BlockModel train_block(const SceneBundle& bundle, const BlockData& block, const BlockGrid& grid,
                       const PipelineConfig& cfg, const TrainCallbacks& callbacks) {
    return train_block_state(bundle, block, grid, cfg, callbacks).model;
}

std::string metrics_record(BlockId block, std::int64_t iteration, int view_id, const StepReport& report) {
    nlohmann::json levels = nlohmann::json::array();
    for (const auto& t : report.loss.levels)
        levels.push_back({{"k", t.k}, {"l1", t.l1}, {"ssim", t.ssim}, {"coverage", t.coverage}});
    const nlohmann::json rec = {{"block", {block.i, block.j}},
                                {"iteration", iteration},
                                {"view", view_id},
                                {"total", report.loss.total},
                                {"l1_full", report.loss.l1_full},
                                {"ssim_full", report.loss.ssim_full},
                                {"levels", levels},
                                {"anchors", report.anchors},
                                {"selected", report.selected},
                                {"tau_g", report.tau_g}};
    return rec.dump();
}

double smoothed_loss(const std::vector<double>& history, std::size_t end, std::size_t window) {
    end = std::min(end, history.size());
    const std::size_t begin = end > window ? end - window : 0;
    if (end == begin) return 0.0;
    return std::accumulate(history.begin() + begin, history.begin() + end, 0.0) / static_cast<double>(end - begin);
}

}  // namespace hug
