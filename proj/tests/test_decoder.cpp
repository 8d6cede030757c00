#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "chain.hpp"
#include "hug/decoder.hpp"
#include "hug/model.hpp"
#include "test_util.hpp"

#include <Eigen/Dense>

#include <sstream>

using namespace hug;

namespace {

Anchor random_anchor(std::mt19937_64& rng, int F, int k_off) {
    auto u = [&](double lo, double hi) { return lo + (hi - lo) * uniform01(rng); };
    Anchor a;
    a.position = Vec3(u(-2, 2), u(-2, 2), u(-1, 1));
    a.feature = VecX(F);
    for (int f = 0; f < F; ++f) a.feature[f] = u(-1, 1);
    a.scaling = Vec3(u(0.1, 1), u(0.1, 1), u(0.1, 1));
    for (int k = 0; k < k_off; ++k) a.offsets.emplace_back(u(-1, 1), u(-1, 1), u(-1, 1));
    return a;
}

Eigen::MatrixXd as_matrix(const DenseLayer& l) {
    Eigen::MatrixXd m(l.out, l.in);
    for (int o = 0; o < l.out; ++o)
        for (int i = 0; i < l.in; ++i) m(o, i) = l.weight[static_cast<std::size_t>(o) * l.in + i];
    return m;
}

VecX as_vector(const std::vector<double>& v) { return Eigen::Map<const VecX>(v.data(), static_cast<Eigen::Index>(v.size())); }

VecX head(const MlpHead& h, const VecX& x) {
    const VecX pre = as_matrix(h.hidden) * x + as_vector(h.hidden.bias);
    return as_matrix(h.output) * pre.cwiseMax(0.0) + as_vector(h.output.bias);
}

// Decoder forward written with dense matrices.
std::vector<Gaussian3D> reference_decode(const Anchor& a, const Vec3& cam, const DecoderWeights& w) {
    VecX x(w.feature_dim + 4);
    x.head(w.feature_dim) = a.feature;
    const Vec3 d = a.position - cam;
    x.segment<3>(w.feature_dim) = d.normalized();
    x[w.feature_dim + 3] = d.norm() / w.distance_scale;
    const VecX op = head(w.opacity, x), col = head(w.color, x), cov = head(w.covariance, x);
    auto sig = [](double v) { return 1 / (1 + std::exp(-v)); };
    std::vector<Gaussian3D> out(w.k_off);
    for (int k = 0; k < w.k_off; ++k) {
        out[k].mean = a.position + a.offsets[k].cwiseProduct(a.scaling);
        out[k].opacity = sig(op[k]);
        for (int c = 0; c < 3; ++c) {
            out[k].color[c] = sig(col[3 * k + c]);
            out[k].scale[c] = std::exp(std::min(3.0, std::max(-8.0, cov[7 * k + c] + std::log(a.scaling[c]))));
        }
        const Vec4 q(cov[7 * k + 3] + 1, cov[7 * k + 4], cov[7 * k + 5], cov[7 * k + 6]);
        out[k].rotation = q.normalized();
    }
    return out;
}

}  // namespace

TEST_CASE("zero weights decode to neutral Gaussians") {
    std::mt19937_64 rng(1);
    const DecoderWeights w = init_weights(1, 6, 8, 4).zeros_like();
    const Anchor a = random_anchor(rng, 6, 4);
    const auto gs = decode(a, Vec3(5, 5, 5), w);
    REQUIRE(gs.size() == 4);
    for (const auto& g : gs) {
        CHECK(g.opacity == 0.5);
        CHECK(g.color == Vec3::Constant(0.5));
        CHECK((g.scale - a.scaling).norm() < 1e-12);
        CHECK(g.rotation == Vec4(1, 0, 0, 0));
    }
}

TEST_CASE("decoded positions") {
    std::mt19937_64 rng(2);
    const DecoderWeights w = init_weights(2, 5, 8, 6);
    Anchor a = random_anchor(rng, 5, 6);
    SUBCASE("zero offsets put every Gaussian on the anchor") {
        for (auto& o : a.offsets) o.setZero();
        for (const auto& g : decode(a, Vec3(3, 0, 0), w)) CHECK(g.mean == a.position);
    }
    SUBCASE("position = anchor + offset * scaling, for any camera") {
        const auto g1 = decode(a, Vec3(3, 0, 0), w), g2 = decode(a, Vec3(-7, 2, 9), w);
        for (int k = 0; k < 6; ++k) {
            const Vec3 expect(a.position.x() + a.offsets[k].x() * a.scaling.x(),
                              a.position.y() + a.offsets[k].y() * a.scaling.y(),
                              a.position.z() + a.offsets[k].z() * a.scaling.z());
            CHECK((g1[k].mean - expect).norm() < 1e-14);
            CHECK(g1[k].mean == g2[k].mean);
        }
    }
    SUBCASE("d position / d offset = diag(scaling)") {
        for (int c = 0; c < 3; ++c) {
            const double saved = a.offsets[2][c];
            a.offsets[2][c] = saved + 1e-6;
            const Vec3 up = decode(a, Vec3::Zero(), w)[2].mean;
            a.offsets[2][c] = saved - 1e-6;
            const Vec3 down = decode(a, Vec3::Zero(), w)[2].mean;
            a.offsets[2][c] = saved;
            Vec3 expect = Vec3::Zero();
            expect[c] = a.scaling[c];
            CHECK(((up - down) / 2e-6 - expect).norm() < 1e-8);
        }
    }
}

TEST_CASE("init_weights") {
    const auto a = init_weights(7, 10, 12, 3, {1, 2}, 4.5), b = init_weights(7, 10, 12, 3, {1, 2}, 4.5);
    const auto c = init_weights(8, 10, 12, 3, {1, 2}, 4.5);
    std::vector<double> pa, pb, pc;
    a.for_each_param([&](std::span<const double> p) { pa.insert(pa.end(), p.begin(), p.end()); });
    b.for_each_param([&](std::span<const double> p) { pb.insert(pb.end(), p.begin(), p.end()); });
    c.for_each_param([&](std::span<const double> p) { pc.insert(pc.end(), p.begin(), p.end()); });
    CHECK(pa == pb);
    CHECK(pa != pc);
    CHECK(pa.size() == static_cast<std::size_t>(3 * (12 * 14 + 12) + (3 + 9 + 21) * 13));
    CHECK(a.input_dim() == 14);
    CHECK(a.block == BlockId{1, 2});
    CHECK(a.distance_scale == 4.5);
    for (const MlpHead* h : {&a.opacity, &a.color, &a.covariance}) {
        for (double v : h->hidden.weight) CHECK(std::abs(v) <= 1 / std::sqrt(14.0));
        for (double v : h->hidden.bias) CHECK(std::abs(v) <= 1 / std::sqrt(14.0));
        for (double v : h->output.weight) CHECK(std::abs(v) <= 1 / std::sqrt(12.0));
        for (double v : h->output.bias) CHECK(std::abs(v) <= 1 / std::sqrt(12.0));
    }
    CHECK(a.opacity.output.out == 3);
    CHECK(a.color.output.out == 9);
    CHECK(a.covariance.output.out == 21);
    CHECK_THROWS_AS(init_weights(1, 0, 4, 2), ContractError);
    CHECK_THROWS_AS(init_weights(1, 4, 4, 0), ContractError);
}

TEST_CASE("decode matches the dense reference and respects output ranges") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        DecoderWeights w = init_weights(trial, 8, 16, 5, {}, 3.0);
        // Inflate some weights so the clamps and saturation get exercised.
        if (trial % 5 == 0)
            w.for_each_param([](std::span<double> p) {
                for (double& v : p) v *= 40;
            });
        const Anchor a = random_anchor(rng, 8, 5);
        const Vec3 cam(uniform01(rng) * 10 - 5, uniform01(rng) * 10 - 5, 3);
        const auto got = decode(a, cam, w), expect = reference_decode(a, cam, w);
        for (int k = 0; k < 5; ++k) {
            CHECK(got[k].opacity == doctest::Approx(expect[k].opacity).epsilon(1e-12));
            CHECK((got[k].color - expect[k].color).norm() < 1e-12);
            CHECK((got[k].scale - expect[k].scale).norm() <= 1e-12 * expect[k].scale.norm());
            CHECK((got[k].rotation - expect[k].rotation).norm() < 1e-12);
            CHECK(got[k].opacity >= 0);
            CHECK(got[k].opacity <= 1);
            CHECK(got[k].color.minCoeff() >= 0);
            CHECK(got[k].color.maxCoeff() <= 1);
            CHECK(got[k].scale.minCoeff() >= std::exp(kMinLogScale));
            CHECK(got[k].scale.maxCoeff() <= std::exp(kMaxLogScale) * (1 + 1e-15));
            CHECK(got[k].rotation.norm() == doctest::Approx(1.0));
        }
    }
}

TEST_CASE("view dependence enters only through direction and distance") {
    std::mt19937_64 rng(4);
    const DecoderWeights w = init_weights(4, 6, 8, 3, {}, 2.0);
    const Anchor a = random_anchor(rng, 6, 3);
    const Vec3 dir = Vec3(1, 2, 2).normalized();
    // Same direction and distance from a different anchor position.
    Anchor b = a;
    b.position += Vec3(1, 1, 1);
    const auto ga = decode(a, a.position - 3 * dir, w), gb = decode(b, b.position - 3 * dir, w);
    for (int k = 0; k < 3; ++k) {
        CHECK(ga[k].opacity == gb[k].opacity);
        CHECK(ga[k].color == gb[k].color);
    }
    // Camera at the anchor: direction input is zero and decoding is finite.
    for (const auto& g : decode(a, a.position, w)) CHECK(std::isfinite(g.opacity));
}

TEST_CASE("shape mismatches are rejected") {
    std::mt19937_64 rng(5);
    const DecoderWeights w = init_weights(5, 6, 8, 3);
    CHECK_THROWS_AS(decode(random_anchor(rng, 5, 3), Vec3::Zero(), w), ContractError);
    CHECK_THROWS_AS(decode(random_anchor(rng, 6, 4), Vec3::Zero(), w), ContractError);
    DecoderWeights g = w.zeros_like();
    std::vector<Gaussian3DGrad> up(2);
    CHECK_THROWS_AS(decoder_backward(random_anchor(rng, 6, 3), Vec3::Zero(), w, up, g), ContractError);
    DecoderWeights other = init_weights(5, 6, 9, 3);
    CHECK_THROWS_AS(g += other, ContractError);
}

TEST_CASE("decoder_backward against finite differences") {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 5; ++trial) {
        DecoderWeights w = init_weights(10 + trial, 6, 10, 4, {}, 3.0);
        Anchor a = random_anchor(rng, 6, 4);
        const Vec3 cam(4, -3, 2);
        std::vector<Gaussian3DGrad> up(4);
        for (auto& u : up) {
            u.mean = Vec3::Random();
            u.scale = Vec3::Random();
            u.rotation = Vec4::Random();
            u.opacity = 2 * uniform01(rng) - 1;
            u.color = Vec3::Random();
        }
        auto f = [&] {
            const auto gs = decode(a, cam, w);
            double l = 0;
            for (int k = 0; k < 4; ++k)
                l += up[k].mean.dot(gs[k].mean) + up[k].scale.dot(gs[k].scale) + up[k].rotation.dot(gs[k].rotation) +
                     up[k].opacity * gs[k].opacity + up[k].color.dot(gs[k].color);
            return l;
        };
        DecoderWeights wg = w.zeros_like();
        const AnchorGrad ag = decoder_backward(a, cam, w, up, wg);
        std::vector<double> an, nu;
        for (int i = 0; i < 6; ++i) {
            an.push_back(ag.feature[i]);
            nu.push_back(oracle::central(a.feature[i], 1e-6, f));
        }
        for (int k = 0; k < 4; ++k)
            for (int c = 0; c < 3; ++c) {
                an.push_back(ag.offsets[k][c]);
                nu.push_back(oracle::central(a.offsets[k][c], 1e-6, f));
            }
        for (int c = 0; c < 3; ++c) {
            an.push_back(ag.scaling[c]);
            nu.push_back(oracle::central(a.scaling[c], 1e-6, f));
        }
        CHECK(oracle::rel_error(an, nu) < 1e-6);

        std::vector<double> wa, wn;
        wg.for_each_param([&](std::span<const double> p) { wa.insert(wa.end(), p.begin(), p.end()); });
        w.for_each_param([&](std::span<double> p) {
            for (double& v : p) wn.push_back(oracle::central(v, 1e-6, f));
        });
        CHECK(oracle::rel_error(wa, wn) < 1e-6);

        // Gradients accumulate rather than overwrite.
        DecoderWeights twice = w.zeros_like();
        decoder_backward(a, cam, w, up, twice);
        decoder_backward(a, cam, w, up, twice);
        std::vector<double> t;
        twice.for_each_param([&](std::span<const double> p) { t.insert(t.end(), p.begin(), p.end()); });
        for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == doctest::Approx(2 * wa[i]));
    }
}

TEST_CASE("anchor -> decoder -> rasterizer chain matches finite differences") {
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto err = chain::check(chain::make_scene(seed));
        CHECK(err.feature <= 1e-3);
        CHECK(err.offsets <= 1e-3);
        CHECK(err.scaling <= 1e-3);
        CHECK(err.decoder <= 1e-3);
    }
}

TEST_CASE("decoder and block model serialization") {
    const DecoderWeights w = init_weights(9, 7, 5, 3, {2, 3}, 6.25);
    std::stringstream buf;
    write_decoder(buf, w);
    const DecoderWeights r = read_decoder(buf);
    CHECK(r.block == w.block);
    CHECK(r.feature_dim == 7);
    CHECK(r.hidden_dim == 5);
    CHECK(r.k_off == 3);
    CHECK(r.distance_scale == 6.25);
    std::vector<double> pw, pr;
    w.for_each_param([&](std::span<const double> p) { pw.insert(pw.end(), p.begin(), p.end()); });
    r.for_each_param([&](std::span<const double> p) { pr.insert(pr.end(), p.begin(), p.end()); });
    CHECK(pw == pr);

    const std::string bytes = buf.str();
    std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(read_decoder(truncated), ParseError);
    std::stringstream bad("XXXX" + bytes.substr(4));
    CHECK_THROWS_AS(read_decoder(bad), ParseError);

    testutil::TempDir dir("hug_decoder");
    auto scene = chain::make_scene(4);
    scene.model.ctx.d_min_clamped = true;
    save_block_model(scene.model, dir.path() / "m.model");
    const BlockModel back = load_block_model(dir.path() / "m.model");
    CHECK(back.block_id == scene.model.block_id);
    CHECK(back.bounds_min == scene.model.bounds_min);
    CHECK(back.bounds_max == scene.model.bounds_max);
    CHECK(back.ctx.K == scene.model.ctx.K);
    CHECK(back.ctx.d_min_clamped);
    CHECK(back.anchors.size() == scene.model.anchors.size());
    const auto a = render_model(scene.model, scene.view, scene.settings, 0.1);
    const auto b = render_model(back, scene.view, scene.settings, 0.1);
    CHECK(a.rgb.data == b.rgb.data);
    CHECK_THROWS_AS(load_block_model(dir.path() / "missing.model"), IoError);
}
