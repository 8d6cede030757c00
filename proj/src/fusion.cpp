#include "hug/fusion.hpp"

#include "hug/loss.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <ostream>
#include <set>

namespace hug {

int votes_inside(const BlockModel& model, const Anchor& anchor) {
    int inside = 0;
    for (const auto& off : anchor.offsets)
        inside += model.in_bounds(anchor.position + off.cwiseProduct(anchor.scaling)) ? 1 : 0;
    return inside;
}

AnchorSet refilter_anchors(const BlockModel& model) {
    AnchorSet out;
    out.K = model.anchors.K;
    out.next_id = model.anchors.next_id;
    for (const auto& a : model.anchors.anchors) {
        // Strict majority: 2 * inside > k_off.
        if (model.in_bounds(a.position) || 2 * votes_inside(model, a) > static_cast<int>(a.offsets.size()))
            out.anchors.push_back(a);
    }
    return out;
}

std::size_t FusedScene::anchor_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += b.anchors.size();
    return n;
}

FusedScene fuse(std::vector<BlockModel> models, const Vec3& background) {
    std::set<BlockId> seen;
    for (const auto& m : models)
        if (!seen.insert(m.block_id).second) throw ContractError("fuse: duplicate block " + to_string(m.block_id));
    FusedScene scene;
    scene.background = background;
    for (auto& m : models) {
        m.anchors = refilter_anchors(m);
        scene.blocks.push_back(std::move(m));
    }
    return scene;
}

FrameBuffer render_global(const FusedScene& scene, const CameraView& view, const RenderSettings& settings,
                          double guard_band) {
    std::vector<Gaussian3D> gaussians;
    std::vector<std::uint64_t> ids;
    for (const auto& block : scene.blocks) {
        DecodedView dv = decode_view(block, view, guard_band);
        gaussians.insert(gaussians.end(), dv.gaussians.begin(), dv.gaussians.end());
        ids.insert(ids.end(), dv.ids.begin(), dv.ids.end());
    }
    RenderSettings s = settings;
    s.background = scene.background;
    return render(gaussians, ids, view, s).fb;
}

EvalReport evaluate(const FusedScene& scene, std::span<const CameraView> views, const RenderSettings& settings,
                    double guard_band) {
    EvalReport report;
    for (const auto& v : views) {
        if (!v.pixels) throw ContractError("evaluate: view " + std::to_string(v.id) + " has no ground truth");
        const FrameBuffer fb = render_global(scene, v, settings, guard_band);
        const Bitmap full(v.width, v.height, 1);
        ViewMetrics m;
        m.view_id = v.id;
        m.psnr = psnr(*v.pixels, fb.rgb);
        m.ssim = ssim_masked_value(*v.pixels, fb.rgb, full);
        report.views.push_back(m);
        report.mean_psnr += m.psnr;
        report.mean_ssim += m.ssim;
    }
    if (!report.views.empty()) {
        report.mean_psnr /= static_cast<double>(report.views.size());
        report.mean_ssim /= static_cast<double>(report.views.size());
    }
    return report;
}

void write_eval_report(std::ostream& out, const EvalReport& report) {
    for (const auto& m : report.views)
        out << nlohmann::json{{"view", m.view_id}, {"psnr", m.psnr}, {"ssim", m.ssim}}.dump() << '\n';
    out << nlohmann::json{{"summary", true},
                          {"views", report.views.size()},
                          {"mean_psnr", report.mean_psnr},
                          {"mean_ssim", report.mean_ssim}}
               .dump()
        << '\n';
}

}  // namespace hug
