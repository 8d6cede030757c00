#pragma once

#include "hug/types.hpp"

#include <span>
#include <vector>

namespace hug {

struct PipelineConfig;

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

/// Mean absolute channel difference over pixels where mask = 1 (0 for an
/// empty mask). `grad`, when given, receives dloss/drender.
double l1_masked(const Image& gt, const Image& render, const Bitmap& mask, Image* grad = nullptr);

/// Mean SSIM over the valid 11x11 windows whose center pixel is masked,
/// averaged over channels. Returns 1 when no window qualifies.
double ssim_masked_value(const Image& gt, const Image& render, const Bitmap& mask);

/// 1 - ssim_masked_value (0 for an empty mask). `grad` receives dloss/drender.
double ssim_masked(const Image& gt, const Image& render, const Bitmap& mask, Image* grad = nullptr);

/// 10 log10(1 / MSE), capped at 99 dB when MSE < 1e-10.
double psnr(const Image& a, const Image& b);

/// Loss weights of level term k in [1, K].
struct LevelWeights {
    double l1 = 0;    // lambda / 2^(K+1-k)
    double ssim = 0;  // gamma / 2^k
};
LevelWeights level_weights(double lambda, double gamma, int K, int k);

struct LevelTerm {
    int k = 0;
    LevelWeights weights;
    double l1 = 0;
    double ssim = 0;
    double coverage = 0;  // fraction of pixels in the opacity mask
};

struct LossBreakdown {
    double l1_full = 0;
    double ssim_full = 0;
    std::vector<LevelTerm> levels;
    double total = 0;
};

/// One per-level render R_{K-k} and its opacity mask, ordered k = 1..K.
struct LevelRender {
    const Image* image = nullptr;
    Bitmap opacity_mask;
};

struct HierarchicalGrads {
    Image full;
    std::vector<Image> levels;
};

/// Hierarchical weighted image loss. Every term is additionally gated by
/// `block_mask`; level terms use `opacity_mask AND block_mask`.
LossBreakdown hierarchical_loss(const Image& gt, const Image& full, std::span<const LevelRender> levels,
                                const Bitmap& block_mask, double lambda, double gamma, double theta, int K,
                                HierarchicalGrads* grads = nullptr);

}  // namespace hug
