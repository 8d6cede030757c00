#pragma once

#include "hug/scene.hpp"
#include "hug/types.hpp"

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace hug {

/// Uniform ground-plane (x-y) grid over the cloud's bounding box. Cells are
/// half-open [min, max) except the last row/column, which is closed.
struct BlockGrid {
    int nx = 1;
    int ny = 1;
    Vec2 origin = Vec2::Zero();
    Vec2 cell_size = Vec2::Ones();

    BlockId cell_of(const Vec3& p) const;
    /// Ground-plane bounds [min, max] of a cell.
    Vec2 cell_min(BlockId id) const;
    Vec2 cell_max(BlockId id) const;
    bool contains(BlockId id, const Vec3& p) const;
};

struct VisibilityMask {
    int view_id = 0;
    BlockId block_id;
    Bitmap bitmap;
};

struct BlockData {
    BlockId block_id;
    std::vector<SparsePoint> points;
    std::vector<int> assigned_views;
    std::vector<VisibilityMask> masks;  // one per assigned view, same order
};

/// Throws ConfigError for a degenerate bbox with more than one cell along a
/// collapsed axis.
BlockGrid make_grid(const SceneBundle& bundle, int nx, int ny);

/// Blocks in row-major order (j outer, i inner), every point in exactly one.
std::vector<BlockData> partition_uniform(const SceneBundle& bundle, int nx, int ny);
std::vector<BlockData> partition_uniform(const SceneBundle& bundle, const BlockGrid& grid);

/// Track membership when the track is non-empty, otherwise a frustum test.
bool is_point_visible(const SparsePoint& p, const CameraView& view);

/// View i joins block j when strictly more than tau_p block points are visible.
/// Views listed in `excluded` are never assigned.
void assign_views(std::vector<BlockData>& blocks, std::span<const CameraView> views, double tau_p,
                  std::span<const int> excluded = {});

/// Splat visible block points into cell_px x cell_px cells, dilate the
/// occupied pixels by dilation_px (Chebyshev), then fill enclosed holes.
VisibilityMask build_visibility_mask(const BlockData& block, const CameraView& view, int cell_px, int dilation_px);

/// One JSON object per line: a grid record followed by one record per block.
void write_partition_manifest(std::ostream& out, const BlockGrid& grid, const std::vector<BlockData>& blocks,
                              const std::vector<std::vector<std::string>>& mask_paths);

}  // namespace hug
