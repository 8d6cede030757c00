#include "hug/renderer.hpp"

#include "hug/config.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace hug {
namespace {

constexpr int kTile = 16;

// Per-splat quantities shared by the forward and backward rasterizer.
struct SplatSetup {
    double conic_a = 0, conic_b = 0, conic_c = 0;  // inverse covariance
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1;          // inclusive pixel range
};

struct TileBins {
    int tiles_x = 0, tiles_y = 0;
    std::vector<std::vector<int>> lists;
};

std::vector<SplatSetup> setup_splats(std::span<const Gaussian2D> splats, int width, int height,
                                     const RenderSettings& settings) {
    std::vector<SplatSetup> out(splats.size());
    for (std::size_t i = 0; i < splats.size(); ++i) {
        const auto& s = splats[i];
        const double det = s.cov(0, 0) * s.cov(1, 1) - s.cov(0, 1) * s.cov(1, 0);
        auto& o = out[i];
        if (!(det > 0)) continue;  // empty pixel range
        o.conic_a = s.cov(1, 1) / det;
        o.conic_b = -s.cov(0, 1) / det;
        o.conic_c = s.cov(0, 0) / det;
        // The ellipse d^T conic d <= r^2 lies within |dx| <= r sqrt(cov_xx).
        const double rx = settings.cutoff_sigma * std::sqrt(s.cov(0, 0));
        const double ry = settings.cutoff_sigma * std::sqrt(s.cov(1, 1));
        const double fx0 = std::ceil(s.mean.x() - rx - 0.5), fx1 = std::floor(s.mean.x() + rx - 0.5);
        const double fy0 = std::ceil(s.mean.y() - ry - 0.5), fy1 = std::floor(s.mean.y() + ry - 0.5);
        if (fx1 < 0 || fy1 < 0 || fx0 > width - 1 || fy0 > height - 1) continue;
        o.x0 = static_cast<int>(std::max(fx0, 0.0));
        o.x1 = static_cast<int>(std::min(fx1, width - 1.0));
        o.y0 = static_cast<int>(std::max(fy0, 0.0));
        o.y1 = static_cast<int>(std::min(fy1, height - 1.0));
    }
    return out;
}

TileBins bin_splats(const std::vector<SplatSetup>& setup, int width, int height) {
    TileBins bins;
    bins.tiles_x = (width + kTile - 1) / kTile;
    bins.tiles_y = (height + kTile - 1) / kTile;
    bins.lists.resize(static_cast<std::size_t>(bins.tiles_x) * bins.tiles_y);
    for (std::size_t i = 0; i < setup.size(); ++i) {
        const auto& s = setup[i];
        if (s.x1 < s.x0 || s.y1 < s.y0) continue;
        for (int ty = s.y0 / kTile; ty <= s.y1 / kTile; ++ty)
            for (int tx = s.x0 / kTile; tx <= s.x1 / kTile; ++tx)
                bins.lists[static_cast<std::size_t>(ty) * bins.tiles_x + tx].push_back(static_cast<int>(i));
    }
    return bins;
}

void check_sorted(std::span<const Gaussian2D> splats) {
    for (std::size_t i = 1; i < splats.size(); ++i) {
        const auto& a = splats[i - 1];
        const auto& b = splats[i];
        if (b.depth < a.depth || (b.depth == a.depth && b.id < a.id))
            throw ContractError("rasterize: splats are not sorted by (depth, id)");
    }
}

struct Contribution {
    int splat;
    double alpha;
    double gauss;
    double t_before;
    double dx, dy;
    bool clamped;
};

// Forward compositing of one pixel; fills `contrib` when non-null.
double composite_pixel(std::span<const Gaussian2D> splats, const std::vector<SplatSetup>& setup,
                       const std::vector<int>& candidates, int px, int py, const RenderSettings& settings, Vec3& color,
                       std::vector<Contribution>* contrib) {
    const double cut2 = settings.cutoff_sigma * settings.cutoff_sigma;
    const double x = px + 0.5, y = py + 0.5;
    double t = 1.0;
    color.setZero();
    for (int idx : candidates) {
        const auto& st = setup[idx];
        if (px < st.x0 || px > st.x1 || py < st.y0 || py > st.y1) continue;
        const auto& s = splats[idx];
        const double dx = x - s.mean.x(), dy = y - s.mean.y();
        const double maha = st.conic_a * dx * dx + 2.0 * st.conic_b * dx * dy + st.conic_c * dy * dy;
        if (maha > cut2) continue;
        const double gauss = std::exp(-0.5 * maha);
        const double raw = s.opacity * gauss;
        const bool clamped = raw > settings.alpha_clamp;
        const double alpha = clamped ? settings.alpha_clamp : std::max(raw, 0.0);
        if (contrib) contrib->push_back({idx, alpha, gauss, t, dx, dy, clamped});
        color += (t * alpha) * s.color;
        t *= 1.0 - alpha;
        if (t < settings.min_transmittance) break;
    }
    return t;
}

}  // namespace

RenderSettings RenderSettings::from_config(const PipelineConfig& cfg) {
    RenderSettings s;
    s.near_plane = cfg.near_plane;
    s.low_pass = cfg.low_pass;
    s.alpha_clamp = cfg.alpha_clamp;
    s.min_transmittance = cfg.min_transmittance;
    s.cutoff_sigma = cfg.cutoff_sigma;
    s.background = cfg.background;
    return s;
}

Gaussian3DGrad& Gaussian3DGrad::operator+=(const Gaussian3DGrad& o) {
    mean += o.mean;
    scale += o.scale;
    rotation += o.rotation;
    opacity += o.opacity;
    color += o.color;
    return *this;
}

Mat3 build_covariance(const Vec3& scale, const Vec4& rotation, bool* renormalized) {
    const double n = rotation.norm();
    if (renormalized) *renormalized = std::abs(n - 1.0) > 1e-9;
    const Mat3 r = quaternion_to_matrix(rotation / n);
    const Mat3 m = r * scale.asDiagonal();
    return m * m.transpose();
}

std::optional<Gaussian2D> project(const Gaussian3D& g, const CameraView& view, const RenderSettings& settings) {
    const Mat3 w = view.rotation_matrix();
    const Vec3 p = w * g.mean + view.translation;
    if (!(p.z() > settings.near_plane)) return std::nullopt;
    const double iz = 1.0 / p.z();
    Mat23 j;
    j << view.fx * iz, 0.0, -view.fx * p.x() * iz * iz, 0.0, view.fy * iz, -view.fy * p.y() * iz * iz;
    const Mat23 t = j * w;
    Gaussian2D out;
    out.cov = t * build_covariance(g.scale, g.rotation) * t.transpose();
    out.cov(0, 0) += settings.low_pass;
    out.cov(1, 1) += settings.low_pass;
    out.mean = Vec2(view.fx * p.x() * iz + view.cx, view.fy * p.y() * iz + view.cy);
    out.opacity = g.opacity;
    out.color = g.color;
    out.depth = p.z();
    return out;
}

void sort_by_depth(std::vector<Gaussian2D>& splats) {
    std::sort(splats.begin(), splats.end(), [](const Gaussian2D& a, const Gaussian2D& b) {
        return a.depth < b.depth || (a.depth == b.depth && a.id < b.id);
    });
}

FrameBuffer rasterize(std::span<const Gaussian2D> splats, int width, int height, const RenderSettings& settings) {
    if (width < 1 || height < 1) throw ContractError("rasterize: empty target");
    check_sorted(splats);
    const auto setup = setup_splats(splats, width, height, settings);
    const auto bins = bin_splats(setup, width, height);
    FrameBuffer fb;
    fb.rgb = Image(width, height);
    fb.acc_opacity.assign(static_cast<std::size_t>(width) * height, 0.0);
    Vec3 color;
    for (int py = 0; py < height; ++py) {
        for (int px = 0; px < width; ++px) {
            const auto& cand = bins.lists[static_cast<std::size_t>(py / kTile) * bins.tiles_x + px / kTile];
            const double t = composite_pixel(splats, setup, cand, px, py, settings, color, nullptr);
            const Vec3 rgb = color + t * settings.background;
            for (int c = 0; c < 3; ++c) fb.rgb.at(px, py, c) = rgb[c];
            fb.acc_opacity[static_cast<std::size_t>(py) * width + px] = 1.0 - t;
        }
    }
    return fb;
}

Bitmap extract_opacity_mask(const FrameBuffer& fb, double threshold) {
    Bitmap out(fb.width(), fb.height());
    for (std::size_t i = 0; i < fb.acc_opacity.size(); ++i) out.data[i] = fb.acc_opacity[i] > threshold ? 1 : 0;
    return out;
}

std::vector<Gaussian2DGrad> rasterize_backward(std::span<const Gaussian2D> splats, const FrameBuffer& fb,
                                               const Image& grad_rgb, const RenderSettings& settings) {
    const int width = fb.width(), height = fb.height();
    if (!grad_rgb.same_shape(fb.rgb)) throw ContractError("rasterize_backward: gradient image size mismatch");
    if (fb.acc_opacity.size() != static_cast<std::size_t>(width) * height)
        throw ContractError("rasterize_backward: frame buffer is inconsistent");
    check_sorted(splats);
    const auto setup = setup_splats(splats, width, height, settings);
    const auto bins = bin_splats(setup, width, height);

    std::vector<Gaussian2DGrad> grads(splats.size());
    std::vector<Vec3> conic_grads(splats.size(), Vec3::Zero());  // d/d(a, b, c)
    std::vector<Contribution> contrib;
    Vec3 color;
    for (int py = 0; py < height; ++py) {
        for (int px = 0; px < width; ++px) {
            const Vec3 dl(grad_rgb.at(px, py, 0), grad_rgb.at(px, py, 1), grad_rgb.at(px, py, 2));
            if (dl.isZero(0.0)) continue;
            contrib.clear();
            const auto& cand = bins.lists[static_cast<std::size_t>(py / kTile) * bins.tiles_x + px / kTile];
            const double t_final = composite_pixel(splats, setup, cand, px, py, settings, color, &contrib);
            if (std::abs((1.0 - t_final) - fb.acc_opacity[static_cast<std::size_t>(py) * width + px]) > 1e-9)
                throw ContractError("rasterize_backward: frame buffer does not match the splats");
            // Light arriving from behind contribution i: later splats plus background.
            Vec3 behind = t_final * settings.background;
            for (auto it = contrib.rbegin(); it != contrib.rend(); ++it) {
                const auto& s = splats[it->splat];
                auto& g = grads[it->splat];
                g.color += (it->t_before * it->alpha) * dl;
                const double dalpha = (it->t_before * s.color - behind / (1.0 - it->alpha)).dot(dl);
                behind += (it->t_before * it->alpha) * s.color;
                if (it->clamped || s.opacity * it->gauss <= 0.0) continue;
                g.opacity += it->gauss * dalpha;
                // G = exp(-maha/2)
                const double dmaha = -0.5 * it->gauss * s.opacity * dalpha;
                const auto& st = setup[it->splat];
                const double dx = it->dx, dy = it->dy;
                g.mean.x() -= dmaha * 2.0 * (st.conic_a * dx + st.conic_b * dy);
                g.mean.y() -= dmaha * 2.0 * (st.conic_b * dx + st.conic_c * dy);
                conic_grads[it->splat] += dmaha * Vec3(dx * dx, 2.0 * dx * dy, dy * dy);
            }
        }
    }
    for (std::size_t i = 0; i < splats.size(); ++i) {
        const auto& st = setup[i];
        const Vec3& dc = conic_grads[i];
        Mat2 conic, dconic;
        conic << st.conic_a, st.conic_b, st.conic_b, st.conic_c;
        dconic << dc[0], 0.5 * dc[1], 0.5 * dc[1], dc[2];
        grads[i].cov = -conic * dconic * conic;
    }
    return grads;
}

Gaussian3DGrad project_backward(const Gaussian3D& g, const CameraView& view, const Gaussian2DGrad& grad,
                                const RenderSettings& settings) {
    Gaussian3DGrad out;
    const Mat3 w = view.rotation_matrix();
    const Vec3 p = w * g.mean + view.translation;
    if (!(p.z() > settings.near_plane)) return out;
    const double x = p.x(), y = p.y(), iz = 1.0 / p.z();
    const double fx = view.fx, fy = view.fy;
    Mat23 j;
    j << fx * iz, 0.0, -fx * x * iz * iz, 0.0, fy * iz, -fy * y * iz * iz;
    const Mat23 t = j * w;

    const double qn = g.rotation.norm();
    const Vec4 q = g.rotation / qn;
    const Mat3 rq = quaternion_to_matrix(q);
    const Mat3 m = rq * g.scale.asDiagonal();
    const Mat3 sigma = m * m.transpose();

    const Mat2 dcov = 0.5 * (grad.cov + grad.cov.transpose());
    const Mat23 dt = 2.0 * dcov * t * sigma;
    const Mat3 dsigma = t.transpose() * dcov * t;
    const Mat23 dj = dt * w.transpose();

    Vec3 dp = j.transpose() * grad.mean;
    dp.x() += dj(0, 2) * (-fx * iz * iz);
    dp.y() += dj(1, 2) * (-fy * iz * iz);
    dp.z() += dj(0, 0) * (-fx * iz * iz) + dj(1, 1) * (-fy * iz * iz) + dj(0, 2) * (2.0 * fx * x * iz * iz * iz) +
              dj(1, 2) * (2.0 * fy * y * iz * iz * iz);
    out.mean = w.transpose() * dp;

    const Mat3 dm = 2.0 * dsigma * m;
    Mat3 dr;
    for (int k = 0; k < 3; ++k) {
        out.scale[k] = dm.col(k).dot(rq.col(k));
        dr.col(k) = dm.col(k) * g.scale[k];
    }
    const double qw = q[0], qx = q[1], qy = q[2], qz = q[3];
    Vec4 dq;
    dq[0] = 2 * (-qz * dr(0, 1) + qy * dr(0, 2) + qz * dr(1, 0) - qx * dr(1, 2) - qy * dr(2, 0) + qx * dr(2, 1));
    dq[1] = 2 * (qy * dr(0, 1) + qz * dr(0, 2) + qy * dr(1, 0) - 2 * qx * dr(1, 1) - qw * dr(1, 2) + qz * dr(2, 0) +
                 qw * dr(2, 1) - 2 * qx * dr(2, 2));
    dq[2] = 2 * (-2 * qy * dr(0, 0) + qx * dr(0, 1) + qw * dr(0, 2) + qx * dr(1, 0) + qz * dr(1, 2) - qw * dr(2, 0) +
                 qz * dr(2, 1) - 2 * qy * dr(2, 2));
    dq[3] = 2 * (-2 * qz * dr(0, 0) - qw * dr(0, 1) + qx * dr(0, 2) + qw * dr(1, 0) - 2 * qz * dr(1, 1) +
                 qy * dr(1, 2) + qx * dr(2, 0) + qy * dr(2, 1));
    out.rotation = (dq - q * q.dot(dq)) / qn;
    out.opacity = grad.opacity;
    out.color = grad.color;
    return out;
}

RenderPass render(std::span<const Gaussian3D> gaussians, std::span<const std::uint64_t> ids, const CameraView& view,
                  const RenderSettings& settings) {
    if (ids.size() != gaussians.size()) throw ContractError("render: one id per Gaussian is required");
    RenderPass pass;
    std::vector<std::pair<Gaussian2D, int>> projected;
    projected.reserve(gaussians.size());
    for (std::size_t i = 0; i < gaussians.size(); ++i) {
        if (auto s = project(gaussians[i], view, settings)) {
            s->id = ids[i];
            projected.emplace_back(*s, static_cast<int>(i));
        }
    }
    std::sort(projected.begin(), projected.end(), [](const auto& a, const auto& b) {
        return a.first.depth < b.first.depth || (a.first.depth == b.first.depth && a.first.id < b.first.id);
    });
    pass.splats.reserve(projected.size());
    pass.source.reserve(projected.size());
    for (auto& [s, i] : projected) {
        pass.splats.push_back(s);
        pass.source.push_back(i);
    }
    pass.fb = rasterize(pass.splats, view.width, view.height, settings);
    return pass;
}

RenderGrads render_backward(std::span<const Gaussian3D> gaussians, const RenderPass& pass, const CameraView& view,
                            const Image& grad_rgb, const RenderSettings& settings) {
    if (pass.source.size() != pass.splats.size()) throw ContractError("render_backward: inconsistent render pass");
    RenderGrads out;
    out.gaussians.assign(gaussians.size(), Gaussian3DGrad{});
    out.mean2.assign(gaussians.size(), Vec2::Zero());
    const auto grads2d = rasterize_backward(pass.splats, pass.fb, grad_rgb, settings);
    for (std::size_t k = 0; k < pass.splats.size(); ++k) {
        const int i = pass.source[k];
        if (i < 0 || static_cast<std::size_t>(i) >= gaussians.size())
            throw ContractError("render_backward: render pass does not belong to these Gaussians");
        out.gaussians[i] = project_backward(gaussians[i], view, grads2d[k], settings);
        out.mean2[i] = grads2d[k].mean;
    }
    return out;
}

}  // namespace hug
