#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hug/colmap.hpp"
#include "hug/config.hpp"
#include "hug/image_io.hpp"
#include "hug/synthetic.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include <fstream>

using namespace hug;
using testutil::TempDir;
using testutil::write_file;

namespace {

void write_fixture(const std::filesystem::path& dir, const std::string& model = "PINHOLE 640 480 500 500 320 240",
                   const std::string& points = "1 0.5 0.2 3.0 255 0 0 0.1 1 0\n2 -0.5 0.1 4.0 0 255 0 0.2 1 1\n") {
    write_file(dir / "cameras.txt", "# Camera list\n1 " + model + "\n");
    write_file(dir / "images.txt",
               "# Image list\n#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n"
               "1 1 0 0 0 0 0 0 1 img.png\n"
               "403.3 306.7 1 236.7 252.5 2\n");
    write_file(dir / "points3D.txt", "# 3D point list\n" + points);
}

}  // namespace

TEST_CASE("load_colmap_text reads a hand-built fixture") {
    TempDir dir("colmap");
    write_fixture(dir.path());
    const SceneBundle b = load_colmap_text(dir.path());
    REQUIRE(b.views.size() == 1);
    REQUIRE(b.cloud.size() == 2);
    const auto& v = b.views[0];
    CHECK(v.id == 1);
    CHECK(v.width == 640);
    CHECK(v.height == 480);
    CHECK(v.fx == 500);
    CHECK(v.cy == 240);
    CHECK(v.name == "img.png");
    for (const auto& p : b.cloud) CHECK(p.track == std::set<int>{1});
    CHECK(b.cloud[0].position.isApprox(Vec3(0.5, 0.2, 3.0)));
    CHECK(b.cloud[1].color.isApprox(Vec3(0, 1, 0)));
    CHECK(b.bbox.min.isApprox(Vec3(-0.5, 0.1, 3.0)));
    CHECK(b.bbox.max.isApprox(Vec3(0.5, 0.2, 4.0)));
    CHECK_FALSE(b.bbox_degenerate);
}

TEST_CASE("SIMPLE_PINHOLE shares one focal length") {
    TempDir dir("colmap");
    write_fixture(dir.path(), "SIMPLE_PINHOLE 100 80 90 50 40");
    const SceneBundle b = load_colmap_text(dir.path());
    CHECK(b.views[0].fx == 90);
    CHECK(b.views[0].fy == 90);
    CHECK(b.views[0].cx == 50);
}

TEST_CASE("empty points3D gives an empty cloud with a degenerate bbox and a warning") {
    TempDir dir("colmap");
    write_fixture(dir.path(), "PINHOLE 640 480 500 500 320 240", "");
    const SceneBundle b = load_colmap_text(dir.path());
    CHECK(b.cloud.empty());
    CHECK(b.bbox_degenerate);
    CHECK(b.bbox.min == Vec3::Zero());
    CHECK(b.bbox.max == Vec3::Zero());
    CHECK_FALSE(b.warnings.empty());
}

TEST_CASE("COLMAP errors") {
    TempDir dir("colmap");
    SUBCASE("unsupported camera model") {
        write_fixture(dir.path(), "OPENCV 640 480 500 500 320 240 0 0 0 0");
        CHECK_THROWS_AS(load_colmap_text(dir.path()), ParseError);
        try {
            load_colmap_text(dir.path());
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find("unsupported camera model") != std::string::npos);
        }
    }
    SUBCASE("missing file") {
        write_fixture(dir.path());
        std::filesystem::remove(dir.path() / "points3D.txt");
        CHECK_THROWS_AS(load_colmap_text(dir.path()), IoError);
    }
    SUBCASE("point references an unknown image") {
        write_fixture(dir.path(), "PINHOLE 640 480 500 500 320 240", "1 0 0 3 255 0 0 0.1 7 0\n");
        CHECK_THROWS_AS(load_colmap_text(dir.path()), ParseError);
    }
}

TEST_CASE("COLMAP write then load keeps counts and tracks") {
    SyntheticSpec spec;
    spec.num_points = 60;
    spec.num_views = 6;
    spec.num_holdout = 1;
    spec.image_width = spec.image_height = 16;
    spec.seed = 3;
    const auto scene = generate_synthetic_scene(spec);
    TempDir dir("colmap_rt");
    write_colmap_text(scene.bundle, dir.path());
    const SceneBundle b = load_colmap_text(dir.path());
    REQUIRE(b.views.size() == scene.bundle.views.size());
    REQUIRE(b.cloud.size() == scene.bundle.cloud.size());
    for (std::size_t n = 0; n < b.cloud.size(); ++n) {
        CHECK(b.cloud[n].track == scene.bundle.cloud[n].track);
        CHECK(b.cloud[n].position == scene.bundle.cloud[n].position);
    }
    for (std::size_t n = 0; n < b.views.size(); ++n) {
        CHECK(b.views[n].rotation == scene.bundle.views[n].rotation);
        CHECK(b.views[n].translation == scene.bundle.views[n].translation);
    }
}

TEST_CASE("bbox is minimal") {
    SyntheticSpec spec;
    spec.num_points = 200;
    spec.num_views = 2;
    spec.num_holdout = 0;
    spec.image_width = spec.image_height = 8;
    const auto b = generate_synthetic_scene(spec).bundle;
    const double eps = 1e-9;
    for (int axis = 0; axis < 3; ++axis) {
        for (int side = 0; side < 2; ++side) {
            Aabb shrunk = b.bbox;
            if (side == 0)
                shrunk.min[axis] += eps;
            else
                shrunk.max[axis] -= eps;
            bool excluded = false;
            for (const auto& p : b.cloud) excluded = excluded || !shrunk.contains(p.position);
            CHECK(excluded);
        }
    }
    for (const auto& p : b.cloud) CHECK(b.bbox.contains(p.position));
}

TEST_CASE("image io") {
    TempDir dir("img");
    SUBCASE("2x2 all-white PPM") {
        write_file(dir.path() / "w.ppm", std::string("P6\n2 2\n255\n") + std::string(12, '\xff'));
        const Image img = read_image(dir.path() / "w.ppm");
        CHECK(img.width == 2);
        CHECK(img.height == 2);
        for (double v : img.data) CHECK(v == 1.0);
    }
    SUBCASE("round trip within 1/255") {
        std::mt19937_64 rng(11);
        const Image img = oracle::random_image(16, 16, rng);
        for (const char* name : {"a.png", "a.ppm"}) {
            write_image(img, dir.path() / name);
            const Image back = read_image(dir.path() / name);
            REQUIRE(back.same_shape(img));
            double worst = 0;
            for (std::size_t i = 0; i < img.data.size(); ++i) worst = std::max(worst, std::abs(back.data[i] - img.data[i]));
            CHECK(worst <= 1.0 / 255.0);
        }
    }
    SUBCASE("truncated PPM") {
        write_file(dir.path() / "t.ppm", std::string("P6\n4 4\n255\n") + std::string(10, '\x10'));
        CHECK_THROWS_AS(read_image(dir.path() / "t.ppm"), ParseError);
    }
    SUBCASE("truncated PNG") {
        std::mt19937_64 rng(2);
        write_image(oracle::random_image(16, 16, rng), dir.path() / "t.png");
        std::string bytes = testutil::read_file(dir.path() / "t.png");
        write_file(dir.path() / "t.png", bytes.substr(0, bytes.size() / 2));
        CHECK_THROWS_AS(read_image(dir.path() / "t.png"), ParseError);
    }
    SUBCASE("malformed header") {
        write_file(dir.path() / "bad.ppm", "P3\n2 2\n255\n");
        CHECK_THROWS_AS(read_image(dir.path() / "bad.ppm"), ParseError);
        write_file(dir.path() / "bad2.ppm", "P6\n2 2\n65535\n");
        CHECK_THROWS_AS(read_image(dir.path() / "bad2.ppm"), ParseError);
    }
    SUBCASE("dimension overflow") {
        write_file(dir.path() / "huge.ppm", "P6\n4000000000 4000000000\n255\n");
        CHECK_THROWS_AS(read_image(dir.path() / "huge.ppm"), ParseError);
        write_file(dir.path() / "huge2.ppm", "P6\n100000 100000\n255\n");
        CHECK_THROWS_AS(read_image(dir.path() / "huge2.ppm"), ParseError);
    }
    SUBCASE("bitmap png round trip") {
        Bitmap bm(5, 3);
        bm.at(1, 1) = 1;
        bm.at(4, 2) = 1;
        write_bitmap_png(bm, dir.path() / "m.png");
        CHECK(read_bitmap_png(dir.path() / "m.png").data == bm.data);
    }
}

TEST_CASE("synthetic scene") {
    SUBCASE("same seed gives bit-identical bundles") {
        SyntheticSpec spec;
        spec.seed = 7;
        spec.num_points = 100;
        spec.num_views = 4;
        spec.image_width = spec.image_height = 24;
        const auto a = generate_synthetic_scene(spec), b = generate_synthetic_scene(spec);
        REQUIRE(a.bundle.cloud.size() == b.bundle.cloud.size());
        for (std::size_t n = 0; n < a.bundle.cloud.size(); ++n) {
            CHECK(a.bundle.cloud[n].position == b.bundle.cloud[n].position);
            CHECK(a.bundle.cloud[n].track == b.bundle.cloud[n].track);
        }
        for (std::size_t n = 0; n < a.bundle.views.size(); ++n) CHECK(a.bundle.views[n].pixels->data == b.bundle.views[n].pixels->data);
        spec.seed = 8;
        CHECK(generate_synthetic_scene(spec).bundle.cloud[0].position != a.bundle.cloud[0].position);
    }
    SUBCASE("point on the optical axis is tracked by the view") {
        SyntheticSpec spec;
        spec.fixed_points = {Vec3::Zero()};
        spec.num_views = 1;
        spec.num_holdout = 0;
        const auto s = generate_synthetic_scene(spec);
        REQUIRE(s.bundle.cloud.size() == 1);
        const auto& v = s.bundle.views[0];
        const Vec3 pc = v.to_camera(Vec3::Zero());
        CHECK(std::abs(v.fx * pc.x() / pc.z() + v.cx - v.cx) < 1e-9);
        CHECK(s.bundle.cloud[0].track == std::set<int>{v.id});
    }
    SUBCASE("500 points, 32 ring views: every point tracked, tracks match brute force") {
        SyntheticSpec spec;
        spec.num_points = 500;
        spec.num_views = 32;
        spec.num_holdout = 0;
        const auto s = generate_synthetic_scene(spec);
        for (const auto& p : s.bundle.cloud) {
            CHECK_FALSE(p.track.empty());
            std::set<int> expect;
            for (const auto& v : s.bundle.views) {
                Vec2 uv;
                double z;
                if (oracle::project(v, p.position, uv, z) && z > 1e-6 && uv.x() >= 0 && uv.x() <= v.width &&
                    uv.y() >= 0 && uv.y() <= v.height)
                    expect.insert(v.id);
            }
            CHECK(p.track == expect);
        }
    }
    SUBCASE("invalid specs") {
        SyntheticSpec spec;
        spec.num_views = 0;
        spec.num_holdout = 0;
        CHECK_THROWS_AS(generate_synthetic_scene(spec), ConfigError);
        spec = SyntheticSpec{};
        spec.num_points = 0;
        CHECK_THROWS_AS(generate_synthetic_scene(spec), ConfigError);
        spec = SyntheticSpec{};
        spec.extent = 0;
        CHECK_THROWS_AS(generate_synthetic_scene(spec), ConfigError);
    }
    SUBCASE("views validate and carry images") {
        SyntheticSpec spec;
        spec.num_points = 50;
        spec.num_views = 3;
        spec.image_width = 20;
        spec.image_height = 12;
        const auto s = generate_synthetic_scene(spec);
        CHECK_NOTHROW(s.bundle.validate());
        CHECK(s.holdout.size() == 4);
        for (const auto& v : s.bundle.views) {
            REQUIRE(v.pixels);
            CHECK(v.pixels->width == 20);
            CHECK(v.pixels->height == 12);
        }
    }
}

TEST_CASE("config parsing") {
    SUBCASE("defaults are the reference hyperparameters") {
        const PipelineConfig c;
        CHECK(c.tau_p == 800);
        CHECK(c.lambda == 0.2);
        CHECK(c.gamma == 0.8);
        CHECK(c.theta == 0.02);
        CHECK(c.window_M == 5000);
        CHECK(c.eps_c == 5);
        CHECK(c.tau_g0 == 2e-6);
        CHECK(c.eta == 0.8);
        CHECK(c.beta == 4.0);
        CHECK(c.opacity_mask_threshold == 0.5);
        CHECK_NOTHROW(c.validate());
    }
    SUBCASE("key=value with comments") {
        const auto c = parse_config("# header\ntau_p = 20   # trailing\n\n  window_M=500\nbackground = 1 0.5 0\nseed = 9\n");
        CHECK(c.tau_p == 20);
        CHECK(c.window_M == 500);
        CHECK(c.background == Vec3(1, 0.5, 0));
        CHECK(c.seed == 9);
        CHECK(c.lambda == 0.2);
    }
    SUBCASE("round trip") {
        PipelineConfig c;
        c.tau_g0 = 1.0 / 3.0;
        c.grid_nx = 5;
        c.background = Vec3(0.1, 0.2, 0.3);
        const auto back = parse_config(to_config_text(c));
        CHECK(to_config_text(back) == to_config_text(c));
        CHECK(back.tau_g0 == c.tau_g0);
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(parse_config("no_such_key = 1\n"), ConfigError);
        CHECK_THROWS_AS(parse_config("tau_p = abc\n"), ConfigError);
        CHECK_THROWS_AS(parse_config("tau_p\n"), ConfigError);
        CHECK_THROWS_AS(parse_config("window_M = 1.5\n"), ConfigError);
    }
    SUBCASE("validation") {
        PipelineConfig c;
        c.lambda = 0.3;
        CHECK_THROWS_AS(c.validate(), ConfigError);
        c = PipelineConfig{};
        c.lambda = 0.2 + 5e-10;
        CHECK_NOTHROW(c.validate());
        c = PipelineConfig{};
        c.eta = 1.0;
        CHECK_THROWS_AS(c.validate(), ConfigError);
        c = PipelineConfig{};
        c.beta = 1.0;
        CHECK_THROWS_AS(c.validate(), ConfigError);
        c = PipelineConfig{};
        c.tau_p = -1;
        CHECK_THROWS_AS(c.validate(), ConfigError);
    }
}
