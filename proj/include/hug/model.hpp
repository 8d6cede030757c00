#pragma once

#include "hug/decoder.hpp"
#include "hug/octree.hpp"
#include "hug/renderer.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

namespace hug {

/// Trained (or initialized) state of one block.
struct BlockModel {
    BlockId block_id;
    Vec2 bounds_min = Vec2::Zero();  // ground-plane cell of the block
    Vec2 bounds_max = Vec2::Zero();
    AnchorSet anchors;
    DecoderWeights weights;
    LodContext ctx;

    bool in_bounds(const Vec3& p) const {
        return p.x() >= bounds_min.x() && p.x() <= bounds_max.x() && p.y() >= bounds_min.y() &&
               p.y() <= bounds_max.y();
    }
};

/// Depth tie-break key of a decoded Gaussian: block (16 bits), anchor id
/// (40 bits), offset slot (8 bits).
std::uint64_t splat_id(BlockId block, std::uint64_t anchor_id, int slot);

/// Decoded Gaussians of the anchors a view selects.
struct DecodedView {
    std::vector<std::size_t> selected;  // anchor indices
    std::vector<Gaussian3D> gaussians;  // k_off per selected anchor, in order
    std::vector<std::uint64_t> ids;
};

DecodedView decode_view(const BlockModel& model, const CameraView& view, double guard_band);

/// Renders one block on its own.
FrameBuffer render_model(const BlockModel& model, const CameraView& view, const RenderSettings& settings,
                         double guard_band);

/// Binary layout (little-endian), version 1:
///   "HUGB" u32 version i32 block_i i32 block_j 4 x f64 bounds (min x, min y,
///   max x, max y), LodContext (f64 d_max, f64 d_min, i32 K, 3 x f64 origin,
///   f64 base_cell, u8 d_min_clamped), then an anchor set record and a
///   decoder record.
void write_block_model(std::ostream& out, const BlockModel& model);
BlockModel read_block_model(std::istream& in);
void save_block_model(const BlockModel& model, const std::filesystem::path& path);
BlockModel load_block_model(const std::filesystem::path& path);

}  // namespace hug
