#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hug/loss.hpp"
#include "hug/synthetic.hpp"
#include "hug/trainer.hpp"
#include "oracles.hpp"

#include <nlohmann/json.hpp>

#include <sstream>

using namespace hug;

namespace {

Bitmap random_mask(int w, int h, std::mt19937_64& rng, double p) {
    Bitmap m(w, h);
    for (auto& b : m.data) b = uniform01(rng) < p ? 1 : 0;
    return m;
}

Bitmap full_mask(int w, int h) {
    Bitmap m(w, h);
    std::fill(m.data.begin(), m.data.end(), 1);
    return m;
}

struct Fixture {
    SyntheticScene scene;
    BlockGrid grid;
    std::vector<BlockData> blocks;
    PipelineConfig cfg;

    Fixture() {
        SyntheticSpec spec;
        spec.num_points = 120;
        spec.num_views = 6;
        spec.num_holdout = 0;
        spec.image_width = 24;
        spec.image_height = 24;
        spec.focal = 14;
        spec.seed = 3;
        scene = generate_synthetic_scene(spec);
        grid = make_grid(scene.bundle, 1, 1);
        blocks = partition_uniform(scene.bundle, grid);
        assign_views(blocks, scene.bundle.views, 5);
        cfg.feature_dim = 6;
        cfg.hidden_dim = 8;
        cfg.k_off = 3;
        cfg.window_M = 1000;
        cfg.tau_p = 5;
        cfg.mask_cell_px = 4;
        cfg.mask_dilation_px = 4;
        cfg.iterations = 6;
        cfg.seed = 11;
    }

    const CameraView& view(int id) const { return *scene.bundle.find_view(id); }
};

std::string model_bytes(const BlockModel& m) {
    std::ostringstream out;
    write_block_model(out, m);
    return out.str();
}

}  // namespace

TEST_CASE("l1, ssim and psnr examples") {
    Image a(12, 12), b(12, 12);
    std::fill(b.data.begin(), b.data.end(), 0.25);
    const Bitmap all = full_mask(12, 12);
    CHECK(l1_masked(a, b, all) == doctest::Approx(0.25));
    CHECK(l1_masked(a, a, all) == 0);
    CHECK(l1_masked(a, b, Bitmap(12, 12)) == 0);
    CHECK(psnr(a, b) == doctest::Approx(10 * std::log10(16.0)));
    CHECK(psnr(a, a) == 99.0);
    CHECK(ssim_masked_value(b, b, all) == doctest::Approx(1.0));
    CHECK(ssim_masked(b, b, all) == doctest::Approx(0.0));
    // A corner pixel has no full 11x11 window around it.
    Bitmap border(12, 12);
    border.at(0, 0) = 1;
    CHECK(ssim_masked_value(a, b, border) == 1.0);
    CHECK(ssim_masked(a, b, border) == 0.0);
    CHECK_THROWS_AS(ssim_masked(Image(10, 12), Image(10, 12), Bitmap(10, 12)), ContractError);
    CHECK_THROWS_AS(l1_masked(a, Image(12, 11), all), ContractError);
    CHECK_THROWS_AS(l1_masked(a, b, Bitmap(11, 12)), ContractError);

    // One masked pixel: L1 is the mean over its three channels.
    Bitmap one(12, 12);
    one.at(4, 7) = 1;
    Image c = a;
    c.at(4, 7, 0) = 0.3;
    c.at(4, 7, 2) = -0.6;
    CHECK(l1_masked(a, c, one) == doctest::Approx(0.3));
}

TEST_CASE("masked SSIM matches the direct-window oracle") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const Image a = oracle::random_image(32, 32, rng);
        Image b = a;
        for (auto& v : b.data) v = std::clamp(v + 0.3 * (uniform01(rng) - 0.5), 0.0, 1.0);
        const Bitmap m = trial % 4 == 0 ? full_mask(32, 32) : random_mask(32, 32, rng, 0.5);
        CHECK(ssim_masked_value(a, b, m) == doctest::Approx(oracle::ssim(a, b, m)).epsilon(1e-6));
    }
}

TEST_CASE("masked losses: gradients against finite differences") {
    std::mt19937_64 rng(2);
    const Image gt = oracle::random_image(16, 14, rng);
    Image r = oracle::random_image(16, 14, rng);
    const Bitmap m = random_mask(16, 14, rng, 0.6);
    Image g1, gs;
    l1_masked(gt, r, m, &g1);
    ssim_masked(gt, r, m, &gs);
    std::vector<double> a1, n1, as, ns;
    for (std::size_t i = 0; i < r.data.size(); ++i) {
        a1.push_back(g1.data[i]);
        n1.push_back(oracle::central(r.data[i], 1e-7, [&] { return l1_masked(gt, r, m); }));
        as.push_back(gs.data[i]);
        ns.push_back(oracle::central(r.data[i], 1e-6, [&] { return ssim_masked(gt, r, m); }));
    }
    CHECK(oracle::rel_error(a1, n1) < 1e-6);
    CHECK(oracle::rel_error(as, ns) < 1e-6);
}

TEST_CASE("level weights") {
    CHECK(level_weights(0.2, 0.8, 1, 1).l1 == doctest::Approx(0.1));
    CHECK(level_weights(0.2, 0.8, 1, 1).ssim == doctest::Approx(0.4));
    CHECK(level_weights(0.2, 0.8, 2, 1).l1 == doctest::Approx(0.05));
    CHECK(level_weights(0.2, 0.8, 2, 2).l1 == doctest::Approx(0.1));
    CHECK(level_weights(0.2, 0.8, 2, 2).ssim == doctest::Approx(0.2));
    CHECK(level_weights(0.2, 0.8, 3, 1).l1 == doctest::Approx(0.025));
    CHECK(level_weights(0.2, 0.8, 3, 3).ssim == doctest::Approx(0.1));
    for (int k = 1; k <= 5; ++k) {
        CHECK(level_weights(0.2, 0.8, 5, k).l1 == doctest::Approx(0.2 / std::pow(2.0, 6 - k)));
        CHECK(level_weights(0.2, 0.8, 5, k).ssim == doctest::Approx(0.8 / std::pow(2.0, k)));
    }
    CHECK_THROWS_AS(level_weights(0.2, 0.8, 3, 0), ContractError);
    CHECK_THROWS_AS(level_weights(0.2, 0.8, 3, 4), ContractError);
}

TEST_CASE("hierarchical loss") {
    std::mt19937_64 rng(3);
    const int w = 16, h = 16, K = 3;
    const Image gt = oracle::random_image(w, h, rng), full = oracle::random_image(w, h, rng);
    std::vector<Image> imgs;
    for (int k = 0; k < K; ++k) imgs.push_back(oracle::random_image(w, h, rng));
    std::vector<LevelRender> levels(K);
    for (int k = 0; k < K; ++k) {
        levels[k].image = &imgs[k];
        levels[k].opacity_mask = random_mask(w, h, rng, 0.7);
    }
    const Bitmap block = random_mask(w, h, rng, 0.8);

    SUBCASE("total combines the weighted terms") {
        const auto r = hierarchical_loss(gt, full, levels, block, 0.2, 0.8, 0.02, K);
        double expect = 0.2 * r.l1_full + 0.8 * r.ssim_full;
        REQUIRE(r.levels.size() == K);
        for (const auto& t : r.levels) {
            Bitmap m = levels[t.k - 1].opacity_mask;
            for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = m.data[i] && block.data[i];
            CHECK(t.l1 == doctest::Approx(l1_masked(gt, imgs[t.k - 1], m)));
            CHECK(t.coverage == doctest::Approx(static_cast<double>(m.count()) / (w * h)));
            expect += 0.02 * (t.weights.l1 * t.l1 + t.weights.ssim * t.ssim);
        }
        CHECK(r.total == doctest::Approx(expect));
    }
    SUBCASE("pixels outside the block mask do not matter") {
        Image full2 = full, gt2 = gt;
        std::vector<Image> imgs2 = imgs;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (!block.at(x, y))
                    for (int c = 0; c < 3; ++c) {
                        full2.at(x, y, c) = 7;
                        for (auto& im : imgs2) im.at(x, y, c) = -3;
                    }
        std::vector<LevelRender> l2 = levels;
        for (int k = 0; k < K; ++k) l2[k].image = &imgs2[k];
        // L1 is gated per pixel; SSIM windows may still reach across the mask edge.
        const auto a = hierarchical_loss(gt, full, levels, block, 0.2, 0.8, 0.02, K);
        const auto b = hierarchical_loss(gt, full2, l2, block, 0.2, 0.8, 0.02, K);
        CHECK(a.l1_full == doctest::Approx(b.l1_full));
        for (int k = 0; k < K; ++k) CHECK(a.levels[k].l1 == doctest::Approx(b.levels[k].l1));
    }
    SUBCASE("an empty block mask zeroes every term") {
        const auto r = hierarchical_loss(gt, full, levels, Bitmap(w, h), 0.2, 0.8, 0.02, K);
        CHECK(r.total == 0);
        for (const auto& t : r.levels) CHECK(t.coverage == 0);
    }
    SUBCASE("gradients against finite differences") {
        HierarchicalGrads g;
        hierarchical_loss(gt, full, levels, block, 0.2, 0.8, 0.02, K, &g);
        REQUIRE(g.levels.size() == K);
        Image f = full;
        std::vector<double> an, nu;
        for (std::size_t i = 0; i < f.data.size(); i += 5) {
            an.push_back(g.full.data[i]);
            nu.push_back(oracle::central(f.data[i], 1e-6,
                                         [&] { return hierarchical_loss(gt, f, levels, block, 0.2, 0.8, 0.02, K).total; }));
        }
        for (int k = 0; k < K; ++k)
            for (std::size_t i = 0; i < imgs[k].data.size(); i += 7) {
                an.push_back(g.levels[k].data[i]);
                nu.push_back(oracle::central(imgs[k].data[i], 1e-6, [&] {
                    return hierarchical_loss(gt, full, levels, block, 0.2, 0.8, 0.02, K).total;
                }));
            }
        CHECK(oracle::rel_error(an, nu) < 1e-5);
    }
    SUBCASE("wrong level count is rejected") {
        CHECK_THROWS_AS(hierarchical_loss(gt, full, std::span(levels).first(2), block, 0.2, 0.8, 0.02, K),
                        ContractError);
    }
}

TEST_CASE("smoothed_loss") {
    const std::vector<double> h{4, 2, 6, 8};
    CHECK(smoothed_loss(h, 4, 2) == doctest::Approx(7));
    CHECK(smoothed_loss(h, 2, 2) == doctest::Approx(3));
    CHECK(smoothed_loss(h, 4, 10) == doctest::Approx(5));
}

TEST_CASE("train state initialisation") {
    Fixture fx;
    REQUIRE(!fx.blocks[0].assigned_views.empty());
    const TrainState s = init_train_state(fx.scene.bundle, fx.blocks[0], fx.grid, fx.cfg);
    CHECK(s.iteration == 0);
    CHECK(s.model.anchors.size() > 0);
    CHECK(s.model.anchors.K == s.model.ctx.K);
    CHECK(s.model.weights.feature_dim == 6);
    CHECK(s.model.weights.k_off == 3);
    CHECK(s.model.weights.distance_scale == s.model.ctx.d_max);
    CHECK(s.model.bounds_min == fx.grid.cell_min({0, 0}));
    CHECK(s.model.bounds_max == fx.grid.cell_max({0, 0}));
    for (const auto& a : s.model.anchors.anchors) {
        CHECK(a.feature.size() == 6);
        CHECK(a.offsets.size() == 3);
    }
}

TEST_CASE("train_step") {
    Fixture fx;
    auto& block = fx.blocks[0];
    block.masks.clear();
    for (int id : block.assigned_views)
        block.masks.push_back(build_visibility_mask(block, fx.view(id), fx.cfg.mask_cell_px, fx.cfg.mask_dilation_px));
    const CameraView& v = fx.view(block.assigned_views[0]);

    SUBCASE("zero learning rates leave every parameter unchanged") {
        fx.cfg.lr_offsets = fx.cfg.lr_features = fx.cfg.lr_scaling = fx.cfg.lr_decoder = 0;
        TrainState s = init_train_state(fx.scene.bundle, block, fx.grid, fx.cfg);
        const std::string before = model_bytes(s.model);
        for (int i = 0; i < 3; ++i) train_step(s, v, block.masks[0].bitmap, block, fx.cfg);
        CHECK(model_bytes(s.model) == before);
        CHECK(s.iteration == 3);
        CHECK(s.loss_history.size() == 3);
        CHECK(s.loss_history[0] == s.loss_history[2]);
    }
    SUBCASE("repeated steps on one view lower its loss") {
        TrainState s = init_train_state(fx.scene.bundle, block, fx.grid, fx.cfg);
        const auto first = train_step(s, v, block.masks[0].bitmap, block, fx.cfg);
        StepReport last;
        for (int i = 0; i < 40; ++i) last = train_step(s, v, block.masks[0].bitmap, block, fx.cfg);
        CHECK(last.loss.total < first.loss.total);
        CHECK(first.selected > 0);
        CHECK(first.anchors == s.model.anchors.size());
        CHECK(first.tau_g == fx.cfg.tau_g0);
        CHECK(first.loss.levels.size() == static_cast<std::size_t>(s.model.ctx.K));
    }
    SUBCASE("contract violations") {
        TrainState s = init_train_state(fx.scene.bundle, block, fx.grid, fx.cfg);
        CameraView stranger = v;
        stranger.id = 999;
        CHECK_THROWS_AS(train_step(s, stranger, block.masks[0].bitmap, block, fx.cfg), ContractError);
        CameraView blind = v;
        blind.pixels.reset();
        CHECK_THROWS_AS(train_step(s, blind, block.masks[0].bitmap, block, fx.cfg), ContractError);
        CHECK(s.iteration == 0);
    }
}

TEST_CASE("train_block") {
    Fixture fx;
    SUBCASE("zero iterations returns the initial model") {
        fx.cfg.iterations = 0;
        const TrainState s = train_block_state(fx.scene.bundle, fx.blocks[0], fx.grid, fx.cfg);
        CHECK(s.loss_history.empty());
        CHECK(s.lifecycle_passes == 0);
        CHECK(model_bytes(s.model) ==
              model_bytes(init_train_state(fx.scene.bundle, fx.blocks[0], fx.grid, fx.cfg).model));
    }
    SUBCASE("window_M = 5 with 10 iterations runs two lifecycle passes") {
        fx.cfg.window_M = 5;
        fx.cfg.iterations = 10;
        int checkpoints = 0;
        std::vector<std::string> lines;
        TrainCallbacks cb;
        cb.on_checkpoint = [&](const TrainState& s) {
            ++checkpoints;
            CHECK(s.iteration % 5 == 0);
        };
        cb.on_metrics = [&](const std::string& line) { lines.push_back(line); };
        const TrainState s = train_block_state(fx.scene.bundle, fx.blocks[0], fx.grid, fx.cfg, cb);
        CHECK(s.lifecycle_passes == 2);
        CHECK(checkpoints == 2);
        REQUIRE(lines.size() == 10);
        const auto j = nlohmann::json::parse(lines[3]);
        CHECK(j["iteration"] == 3);
        CHECK(j["block"] == nlohmann::json::array({0, 0}));
        CHECK(j.contains("levels"));
        CHECK(j["levels"].size() == static_cast<std::size_t>(s.model.ctx.K));
        CHECK(j["total"].get<double>() == doctest::Approx(s.loss_history[3]));
    }
    SUBCASE("deterministic for a fixed seed") {
        fx.cfg.window_M = 4;
        fx.cfg.iterations = 9;
        const TrainState a = train_block_state(fx.scene.bundle, fx.blocks[0], fx.grid, fx.cfg);
        const TrainState b = train_block_state(fx.scene.bundle, fx.blocks[0], fx.grid, fx.cfg);
        CHECK(a.loss_history == b.loss_history);
        CHECK(model_bytes(a.model) == model_bytes(b.model));
        fx.cfg.seed = 12;
        const TrainState c = train_block_state(fx.scene.bundle, fx.blocks[0], fx.grid, fx.cfg);
        CHECK(c.loss_history != a.loss_history);
    }
    SUBCASE("a block without training views is rejected") {
        BlockData empty = fx.blocks[0];
        empty.assigned_views.clear();
        empty.masks.clear();
        CHECK_THROWS_AS(train_block(fx.scene.bundle, empty, fx.grid, fx.cfg), ContractError);
        BlockData nopoints = fx.blocks[0];
        nopoints.points.clear();
        CHECK_THROWS_AS(train_block(fx.scene.bundle, nopoints, fx.grid, fx.cfg), ContractError);
    }
}
