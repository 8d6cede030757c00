#pragma once

#include "hug/model.hpp"
#include "hug/scene.hpp"

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace hug {

/// Anchors of `model` kept by the vote rule: the center lies in the block's
/// ground-plane bounds, or strictly more than half of the decoded Gaussian
/// centers do.
AnchorSet refilter_anchors(const BlockModel& model);

/// Number of an anchor's decoded centers inside the model's bounds.
int votes_inside(const BlockModel& model, const Anchor& anchor);

struct FusedScene {
    std::vector<BlockModel> blocks;  // refiltered
    Vec3 background = Vec3::Zero();

    std::size_t anchor_count() const;
};

/// Refilters every model and collects them. Duplicate block ids raise
/// ContractError.
FusedScene fuse(std::vector<BlockModel> models, const Vec3& background = Vec3::Zero());

/// Every block selects and decodes with its own context and weights, then all
/// Gaussians go through one global depth sort and one rasterize pass.
FrameBuffer render_global(const FusedScene& scene, const CameraView& view, const RenderSettings& settings,
                          double guard_band);

struct ViewMetrics {
    int view_id = 0;
    double psnr = 0;
    double ssim = 0;
};

struct EvalReport {
    std::vector<ViewMetrics> views;
    double mean_psnr = 0;
    double mean_ssim = 0;
};

/// PSNR and full-image SSIM per view against its ground truth pixels.
/// A view without pixels raises ContractError.
EvalReport evaluate(const FusedScene& scene, std::span<const CameraView> views, const RenderSettings& settings,
                    double guard_band);

/// One JSON record per view followed by a summary record.
void write_eval_report(std::ostream& out, const EvalReport& report);

}  // namespace hug
