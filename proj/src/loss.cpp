#include "hug/loss.hpp"

#include <array>
#include <cmath>

namespace hug {
namespace {

constexpr int kHalf = kSsimWindow / 2;

const std::array<double, kSsimWindow>& ssim_kernel() {
    static const auto kernel = [] {
        std::array<double, kSsimWindow> k{};
        double sum = 0;
        for (int i = 0; i < kSsimWindow; ++i) {
            const double d = i - kHalf;
            k[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
            sum += k[i];
        }
        for (auto& v : k) v /= sum;
        return k;
    }();
    return kernel;
}

void check_same(const Image& a, const Image& b, const char* what) {
    if (!a.same_shape(b)) throw ContractError(std::string(what) + ": image dimensions differ");
}

void check_mask(const Image& a, const Bitmap& m, const char* what) {
    if (m.width != a.width || m.height != a.height) throw ContractError(std::string(what) + ": mask dimensions differ");
}

// Planar single-channel buffer.
struct Plane {
    int w = 0, h = 0;
    std::vector<double> v;
    Plane(int w_, int h_) : w(w_), h(h_), v(static_cast<std::size_t>(w_) * h_, 0.0) {}
    double& at(int x, int y) { return v[static_cast<std::size_t>(y) * w + x]; }
    double at(int x, int y) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

// Valid-mode separable correlation: (w, h) -> (w - 10, h - 10).
Plane filter_valid(const Plane& in) {
    const auto& k = ssim_kernel();
    Plane tmp(in.w - 2 * kHalf, in.h);
    for (int y = 0; y < in.h; ++y)
        for (int x = 0; x < tmp.w; ++x) {
            double acc = 0;
            for (int i = 0; i < kSsimWindow; ++i) acc += k[i] * in.at(x + i, y);
            tmp.at(x, y) = acc;
        }
    Plane out(tmp.w, in.h - 2 * kHalf);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) {
            double acc = 0;
            for (int i = 0; i < kSsimWindow; ++i) acc += k[i] * tmp.at(x, y + i);
            out.at(x, y) = acc;
        }
    return out;
}

// Adjoint of filter_valid: (w - 10, h - 10) -> (w, h).
Plane filter_valid_adjoint(const Plane& in, int w, int h) {
    const auto& k = ssim_kernel();
    Plane tmp(in.w, h);
    for (int y = 0; y < in.h; ++y)
        for (int x = 0; x < in.w; ++x) {
            const double v = in.at(x, y);
            if (v == 0.0) continue;
            for (int i = 0; i < kSsimWindow; ++i) tmp.at(x, y + i) += k[i] * v;
        }
    Plane out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < in.w; ++x) {
            const double v = tmp.at(x, y);
            if (v == 0.0) continue;
            for (int i = 0; i < kSsimWindow; ++i) out.at(x + i, y) += k[i] * v;
        }
    return out;
}

Plane channel(const Image& img, int c) {
    Plane p(img.width, img.height);
    for (std::size_t i = 0; i < p.v.size(); ++i) p.v[i] = img.data[i * 3 + c];
    return p;
}

Plane product(const Plane& a, const Plane& b) {
    Plane p(a.w, a.h);
    for (std::size_t i = 0; i < p.v.size(); ++i) p.v[i] = a.v[i] * b.v[i];
    return p;
}

// Returns (sum of SSIM over masked centers and channels, number of masked centers).
std::pair<double, std::size_t> ssim_sum(const Image& gt, const Image& render, const Bitmap& mask, Image* grad) {
    const int w = gt.width, h = gt.height;
    const int vw = w - 2 * kHalf, vh = h - 2 * kHalf;
    std::size_t centers = 0;
    for (int y = 0; y < vh; ++y)
        for (int x = 0; x < vw; ++x) centers += mask.at(x + kHalf, y + kHalf) != 0;
    if (centers == 0) return {0.0, 0};
    double total = 0;
    for (int c = 0; c < 3; ++c) {
        const Plane x = channel(gt, c), y = channel(render, c);
        const Plane mx = filter_valid(x), my = filter_valid(y);
        const Plane exx = filter_valid(product(x, x)), eyy = filter_valid(product(y, y)),
                    exy = filter_valid(product(x, y));
        Plane a_mu(vw, vh), a_yy(vw, vh), a_xy(vw, vh);
        for (int cy = 0; cy < vh; ++cy)
            for (int cx = 0; cx < vw; ++cx) {
                if (!mask.at(cx + kHalf, cy + kHalf)) continue;
                const double ux = mx.at(cx, cy), uy = my.at(cx, cy);
                const double vx = exx.at(cx, cy) - ux * ux, vy = eyy.at(cx, cy) - uy * uy;
                const double cxy = exy.at(cx, cy) - ux * uy;
                const double A = 2 * ux * uy + kSsimC1, B = 2 * cxy + kSsimC2;
                const double C = ux * ux + uy * uy + kSsimC1, D = vx + vy + kSsimC2;
                const double s = (A * B) / (C * D);
                total += s;
                if (!grad) continue;
                const double ds_duy = 2 * ux * B / (C * D) - s * 2 * uy / C;
                const double ds_dcxy = 2 * A / (C * D);
                const double ds_dvy = -s / D;
                a_yy.at(cx, cy) = ds_dvy;
                a_xy.at(cx, cy) = ds_dcxy;
                a_mu.at(cx, cy) = ds_duy - 2 * uy * ds_dvy - ux * ds_dcxy;
            }
        if (!grad) continue;
        const Plane g_mu = filter_valid_adjoint(a_mu, w, h), g_yy = filter_valid_adjoint(a_yy, w, h),
                    g_xy = filter_valid_adjoint(a_xy, w, h);
        for (std::size_t i = 0; i < g_mu.v.size(); ++i)
            grad->data[i * 3 + c] = g_mu.v[i] + 2 * y.v[i] * g_yy.v[i] + x.v[i] * g_xy.v[i];
    }
    return {total, centers};
}

void check_ssim_inputs(const Image& gt, const Image& render, const Bitmap& mask) {
    check_same(gt, render, "ssim");
    check_mask(gt, mask, "ssim");
    if (gt.width < kSsimWindow || gt.height < kSsimWindow)
        throw ContractError("ssim: image is smaller than the 11x11 window");
}

}  // namespace

double l1_masked(const Image& gt, const Image& render, const Bitmap& mask, Image* grad) {
    check_same(gt, render, "l1");
    check_mask(gt, mask, "l1");
    const std::size_t count = mask.count();
    if (grad) *grad = Image(gt.width, gt.height);
    if (count == 0) return 0.0;
    const double norm = 1.0 / (3.0 * static_cast<double>(count));
    double sum = 0;
    for (std::size_t p = 0; p < mask.data.size(); ++p) {
        if (!mask.data[p]) continue;
        for (int c = 0; c < 3; ++c) {
            const double d = render.data[p * 3 + c] - gt.data[p * 3 + c];
            sum += std::abs(d);
            if (grad) grad->data[p * 3 + c] = d > 0 ? norm : (d < 0 ? -norm : 0.0);
        }
    }
    return sum * norm;
}

double ssim_masked_value(const Image& gt, const Image& render, const Bitmap& mask) {
    check_ssim_inputs(gt, render, mask);
    const auto [sum, centers] = ssim_sum(gt, render, mask, nullptr);
    return centers == 0 ? 1.0 : sum / (3.0 * static_cast<double>(centers));
}

double ssim_masked(const Image& gt, const Image& render, const Bitmap& mask, Image* grad) {
    check_ssim_inputs(gt, render, mask);
    if (grad) *grad = Image(gt.width, gt.height);
    const auto [sum, centers] = ssim_sum(gt, render, mask, grad);
    if (centers == 0) return 0.0;
    const double norm = 1.0 / (3.0 * static_cast<double>(centers));
    if (grad)
        for (auto& g : grad->data) g *= -norm;
    return 1.0 - sum * norm;
}

double psnr(const Image& a, const Image& b) {
    check_same(a, b, "psnr");
    double se = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        se += d * d;
    }
    const double mse = a.data.empty() ? 0.0 : se / static_cast<double>(a.data.size());
    if (mse < 1e-10) return 99.0;
    return 10.0 * std::log10(1.0 / mse);
}

LevelWeights level_weights(double lambda, double gamma, int K, int k) {
    if (K < 1 || k < 1 || k > K) throw ContractError("level_weights: k must lie in [1, K]");
    return LevelWeights{std::ldexp(lambda, -(K + 1 - k)), std::ldexp(gamma, -k)};
}

LossBreakdown hierarchical_loss(const Image& gt, const Image& full, std::span<const LevelRender> levels,
                                const Bitmap& block_mask, double lambda, double gamma, double theta, int K,
                                HierarchicalGrads* grads) {
    if (static_cast<int>(levels.size()) != K)
        throw ContractError("hierarchical_loss: expected " + std::to_string(K) + " level renders, got " +
                            std::to_string(levels.size()));
    LossBreakdown out;
    Image g1, gs;
    out.l1_full = l1_masked(gt, full, block_mask, grads ? &g1 : nullptr);
    out.ssim_full = ssim_masked(gt, full, block_mask, grads ? &gs : nullptr);
    out.total = lambda * out.l1_full + gamma * out.ssim_full;
    if (grads) {
        grads->full = Image(gt.width, gt.height);
        for (std::size_t i = 0; i < g1.data.size(); ++i) grads->full.data[i] = lambda * g1.data[i] + gamma * gs.data[i];
        grads->levels.clear();
    }
    double level_sum = 0;
    for (int k = 1; k <= K; ++k) {
        const auto& lr = levels[k - 1];
        if (!lr.image) throw ContractError("hierarchical_loss: missing level render");
        Bitmap mask = lr.opacity_mask;
        if (mask.width != block_mask.width || mask.height != block_mask.height)
            throw ContractError("hierarchical_loss: opacity mask dimensions differ");
        for (std::size_t i = 0; i < mask.data.size(); ++i) mask.data[i] = mask.data[i] && block_mask.data[i];
        LevelTerm term;
        term.k = k;
        term.weights = level_weights(lambda, gamma, K, k);
        term.l1 = l1_masked(gt, *lr.image, mask, grads ? &g1 : nullptr);
        term.ssim = ssim_masked(gt, *lr.image, mask, grads ? &gs : nullptr);
        term.coverage = mask.data.empty() ? 0.0 : static_cast<double>(mask.count()) / mask.data.size();
        level_sum += term.weights.l1 * term.l1 + term.weights.ssim * term.ssim;
        if (grads) {
            Image g(gt.width, gt.height);
            for (std::size_t i = 0; i < g.data.size(); ++i)
                g.data[i] = theta * (term.weights.l1 * g1.data[i] + term.weights.ssim * gs.data[i]);
            grads->levels.push_back(std::move(g));
        }
        out.levels.push_back(term);
    }
    out.total += theta * level_sum;
    return out;
}

}  // namespace hug
