#pragma once

#include "hug/scene.hpp"
#include "hug/types.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace hug {

struct PipelineConfig;

struct Gaussian3D {
    Vec3 mean = Vec3::Zero();
    Vec3 scale = Vec3::Ones();
    Vec4 rotation{1.0, 0.0, 0.0, 0.0};
    double opacity = 1.0;
    Vec3 color = Vec3::Zero();
};

/// Image-space splat of a Gaussian3D.
struct Gaussian2D {
    Vec2 mean = Vec2::Zero();
    Mat2 cov = Mat2::Identity();
    double opacity = 1.0;
    Vec3 color = Vec3::Zero();
    double depth = 1.0;
    std::uint64_t id = 0;  // depth tie-break key
};

struct FrameBuffer {
    Image rgb;
    std::vector<double> acc_opacity;  // 1 - final transmittance, per pixel

    int width() const { return rgb.width; }
    int height() const { return rgb.height; }
};

/// Knobs of the splatting model. They change gradients, so they are part of
/// the configuration rather than constants.
struct RenderSettings {
    double near_plane = 0.01;
    double low_pass = 0.3;
    double alpha_clamp = 0.999;
    double min_transmittance = 1e-4;
    double cutoff_sigma = 3.0;
    Vec3 background = Vec3::Zero();

    static RenderSettings from_config(const PipelineConfig& cfg);
};

/// Sigma = R diag(scale^2) R^T. A rotation whose norm is off by more than 1e-9
/// is normalized and `renormalized` (if given) is set.
Mat3 build_covariance(const Vec3& scale, const Vec4& rotation, bool* renormalized = nullptr);

/// EWA projection with a local affine approximation of the pinhole map.
/// Returns nullopt when the mean is not in front of the near plane.
std::optional<Gaussian2D> project(const Gaussian3D& g, const CameraView& view, const RenderSettings& settings);

/// Sorts by (depth, id) ascending.
void sort_by_depth(std::vector<Gaussian2D>& splats);

/// Front-to-back alpha compositing. `splats` must be sorted by (depth, id);
/// otherwise ContractError.
FrameBuffer rasterize(std::span<const Gaussian2D> splats, int width, int height, const RenderSettings& settings);

/// 1 where acc_opacity > threshold.
Bitmap extract_opacity_mask(const FrameBuffer& fb, double threshold);

struct Gaussian2DGrad {
    Vec2 mean = Vec2::Zero();
    Mat2 cov = Mat2::Zero();  // gradient w.r.t. the symmetric covariance
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();
};

struct Gaussian3DGrad {
    Vec3 mean = Vec3::Zero();
    Vec3 scale = Vec3::Zero();
    Vec4 rotation = Vec4::Zero();
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();

    Gaussian3DGrad& operator+=(const Gaussian3DGrad& o);
};

/// Exact gradients of rasterize() given dL/d rgb. The forward contributions
/// are recomputed per pixel; `fb` must be the forward result for `splats`.
std::vector<Gaussian2DGrad> rasterize_backward(std::span<const Gaussian2D> splats, const FrameBuffer& fb,
                                               const Image& grad_rgb, const RenderSettings& settings);

/// Chains an image-space gradient through project().
Gaussian3DGrad project_backward(const Gaussian3D& g, const CameraView& view, const Gaussian2DGrad& grad,
                                const RenderSettings& settings);

/// A full forward pass over world-space Gaussians.
struct RenderPass {
    FrameBuffer fb;
    std::vector<Gaussian2D> splats;  // sorted
    std::vector<int> source;         // index into the input for each splat
};

/// Per input Gaussian gradients. Culled Gaussians get zeros.
struct RenderGrads {
    std::vector<Gaussian3DGrad> gaussians;
    std::vector<Vec2> mean2;  // image-space positional gradient
};

RenderPass render(std::span<const Gaussian3D> gaussians, std::span<const std::uint64_t> ids, const CameraView& view,
                  const RenderSettings& settings);

RenderGrads render_backward(std::span<const Gaussian3D> gaussians, const RenderPass& pass, const CameraView& view,
                            const Image& grad_rgb, const RenderSettings& settings);

}  // namespace hug
