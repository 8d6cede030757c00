#include "hug/synthetic.hpp"

#include "hug/octree.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace hug {
namespace {

double surface_height(double x, double y, double relief) {
    return relief * (std::sin(0.9 * x) * std::cos(0.7 * y) + 0.5 * std::sin(1.7 * x + 0.4 * y));
}

Vec3 surface_color(const Vec3& p) {
    return Vec3(0.5 + 0.4 * std::sin(0.8 * p.x() + 0.3), 0.5 + 0.4 * std::sin(0.6 * p.y() + 1.1 * p.z()),
                0.5 + 0.4 * std::cos(0.5 * (p.x() + p.y())));
}

CameraView ring_view(int id, double angle, const SyntheticSpec& s) {
    const Vec3 eye(s.camera_radius * std::cos(angle), s.camera_radius * std::sin(angle), s.camera_height);
    return look_at(id, eye, Vec3::Zero(), Vec3::UnitZ(), s.image_width, s.image_height, s.focal, s.focal);
}

}  // namespace

Image render_hidden(const std::vector<Gaussian3D>& hidden, const CameraView& view) {
    std::vector<std::uint64_t> ids(hidden.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    return render(hidden, ids, view, RenderSettings{}).fb.rgb;
}

SyntheticScene generate_synthetic_scene(const SyntheticSpec& spec) {
    if (spec.num_views < 0 || spec.num_holdout < 0) throw ConfigError("view counts must be non-negative");
    if (spec.num_views + spec.num_holdout < 1) throw ConfigError("synthetic scene needs at least one view");
    if (spec.fixed_points.empty() && spec.num_points < 1) throw ConfigError("synthetic scene needs at least one point");
    if (!(spec.extent > 0) || !(spec.gaussian_sigma > 0) || spec.image_width < 1 || spec.image_height < 1 ||
        !(spec.focal > 0))
        throw ConfigError("synthetic scene extents must be positive");

    std::mt19937_64 rng(spec.seed);
    SyntheticScene out;
    auto& bundle = out.bundle;

    std::vector<Vec3> positions = spec.fixed_points;
    if (positions.empty()) {
        for (int n = 0; n < spec.num_points; ++n) {
            const double x = (2.0 * uniform01(rng) - 1.0) * spec.extent;
            const double y = (2.0 * uniform01(rng) - 1.0) * spec.extent;
            positions.emplace_back(x, y, surface_height(x, y, spec.relief));
        }
    }
    for (std::size_t n = 0; n < positions.size(); ++n) {
        SparsePoint p;
        p.id = static_cast<long>(n + 1);
        p.position = positions[n];
        p.color = surface_color(positions[n]);
        bundle.cloud.push_back(p);
        Gaussian3D g;
        g.mean = p.position;
        g.scale = Vec3::Constant(spec.gaussian_sigma);
        g.opacity = 0.95;
        g.color = p.color;
        out.hidden.push_back(g);
    }

    const double step = 2.0 * std::numbers::pi / std::max(spec.num_views, 1);
    for (int k = 0; k < spec.num_views; ++k) bundle.views.push_back(ring_view(k + 1, k * step, spec));
    // Held-out views sit halfway between ring positions, spread around the ring.
    for (int h = 0; h < spec.num_holdout; ++h) {
        const int slot = spec.num_views > 0 ? (h * spec.num_views) / spec.num_holdout : h;
        const double angle = spec.num_views > 0 ? (slot + 0.5) * step : 2.0 * std::numbers::pi * h / spec.num_holdout;
        const int id = spec.num_views + h + 1;
        bundle.views.push_back(ring_view(id, angle, spec));
        out.holdout.push_back(id);
    }
    for (auto& v : bundle.views) {
        v.name = "view_" + std::to_string(v.id) + ".png";
        v.pixels = render_hidden(out.hidden, v);
    }
    for (auto& p : bundle.cloud)
        for (const auto& v : bundle.views)
            if (in_frustum(p.position, v, 0.0, 1e-6)) p.track.insert(v.id);
    bundle.update_bbox();
    return out;
}

}  // namespace hug
