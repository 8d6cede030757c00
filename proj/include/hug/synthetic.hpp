#pragma once

#include "hug/renderer.hpp"
#include "hug/scene.hpp"

#include <cstdint>
#include <vector>

namespace hug {

/// Desk-scale test scene: colored opaque Gaussians over a square ground patch,
/// watched by a ring of cameras looking at the patch center.
struct SyntheticSpec {
    int num_points = 500;
    int num_views = 32;        // training ring
    int num_holdout = 4;       // extra views between ring positions
    double extent = 4.0;       // ground patch is [-extent, extent]^2
    double relief = 0.6;       // amplitude of the height field
    int image_width = 64;
    int image_height = 64;
    double camera_radius = 5.0;
    double camera_height = 2.0;
    double focal = 36.0;
    double gaussian_sigma = 0.22;
    std::vector<Vec3> fixed_points;  // replaces the random layout when non-empty
    std::uint64_t seed = 0;
};

struct SyntheticScene {
    SceneBundle bundle;                // every view carries its ground-truth image
    std::vector<int> holdout;          // ids of the held-out views
    std::vector<Gaussian3D> hidden;    // the Gaussians the images were rendered from
};

/// Deterministic for a fixed spec. Tracks come from a frustum test.
/// Throws ConfigError for zero views, zero points or non-positive extents.
SyntheticScene generate_synthetic_scene(const SyntheticSpec& spec);

/// Ground-truth image of `view` rendered from the hidden Gaussians.
Image render_hidden(const std::vector<Gaussian3D>& hidden, const CameraView& view);

}  // namespace hug
