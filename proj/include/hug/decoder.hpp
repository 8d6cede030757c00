#pragma once

#include "hug/octree.hpp"
#include "hug/renderer.hpp"
#include "hug/types.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

namespace hug {

struct DenseLayer {
    int in = 0;
    int out = 0;
    std::vector<double> weight;  // out x in, row-major
    std::vector<double> bias;    // out

    DenseLayer() = default;
    DenseLayer(int in_dim, int out_dim)
        : in(in_dim), out(out_dim), weight(static_cast<std::size_t>(in_dim) * out_dim, 0.0), bias(out_dim, 0.0) {}
};

/// input -> relu(hidden) -> linear output.
struct MlpHead {
    DenseLayer hidden;
    DenseLayer output;
};

/// Per-block decoder: three heads fed with feature (F) ++ view direction (3)
/// ++ normalized distance (1).
struct DecoderWeights {
    BlockId block;
    int feature_dim = 0;
    int hidden_dim = 0;
    int k_off = 0;
    double distance_scale = 1.0;  // the block's d_max
    MlpHead opacity;     // k_off outputs
    MlpHead color;       // k_off x 3 outputs
    MlpHead covariance;  // k_off x (3 log-scale + 4 quaternion) outputs

    int input_dim() const { return feature_dim + 4; }
    /// Same shapes, all parameters zero.
    DecoderWeights zeros_like() const;
    /// Visits every parameter array in a fixed order.
    void for_each_param(const std::function<void(std::span<double>)>& fn);
    void for_each_param(const std::function<void(std::span<const double>)>& fn) const;
    DecoderWeights& operator+=(const DecoderWeights& o);
};

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for every weight and bias.
DecoderWeights init_weights(std::uint64_t seed, int feature_dim, int hidden_dim, int k_off, BlockId block = {},
                            double distance_scale = 1.0);

constexpr double kMinLogScale = -8.0;
constexpr double kMaxLogScale = 3.0;

/// Decodes one anchor into k_off Gaussians as seen from `camera_center`.
/// Positions are position + offsets * scaling and do not depend on the view.
std::vector<Gaussian3D> decode(const Anchor& anchor, const Vec3& camera_center, const DecoderWeights& weights);

struct AnchorGrad {
    VecX feature;
    std::vector<Vec3> offsets;
    Vec3 scaling = Vec3::Zero();
};

/// Exact gradients of decode(). Accumulates decoder gradients into
/// `weight_grads` and returns the anchor-parameter gradients.
AnchorGrad decoder_backward(const Anchor& anchor, const Vec3& camera_center, const DecoderWeights& weights,
                            std::span<const Gaussian3DGrad> upstream, DecoderWeights& weight_grads);

/// Binary layout (little-endian), version 1:
///   "HUGD" u32 version i32 block_i i32 block_j u32 F u32 H u32 k_off
///   f64 distance_scale, then for the opacity, color and covariance heads in
///   that order: hidden weights (H x (F+4)), hidden bias (H), output weights
///   (out x H), output bias (out); all f64.
void write_decoder(std::ostream& out, const DecoderWeights& w);
DecoderWeights read_decoder(std::istream& in);
void save_decoder(const DecoderWeights& w, const std::filesystem::path& path);
DecoderWeights load_decoder(const std::filesystem::path& path);

}  // namespace hug
