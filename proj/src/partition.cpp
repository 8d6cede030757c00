#include "hug/partition.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <ostream>

namespace hug {
namespace {

int axis_cell(double v, double origin, double size, int n) {
    int idx = static_cast<int>(std::floor((v - origin) / size));
    idx = std::clamp(idx, 0, n - 1);
    // Guard the floor against rounding so boundaries follow the [min, max) rule.
    while (idx > 0 && v < origin + idx * size) --idx;
    while (idx < n - 1 && v >= origin + (idx + 1) * size) ++idx;
    return idx;
}

bool project_to_pixel(const Vec3& p, const CameraView& view, Vec2& uv) {
    const Vec3 pc = view.to_camera(p);
    if (!(pc.z() > 0)) return false;
    uv = Vec2(view.fx * pc.x() / pc.z() + view.cx, view.fy * pc.y() / pc.z() + view.cy);
    return uv.x() >= 0 && uv.x() < view.width && uv.y() >= 0 && uv.y() < view.height;
}

}  // namespace

BlockId BlockGrid::cell_of(const Vec3& p) const {
    return BlockId{axis_cell(p.x(), origin.x(), cell_size.x(), nx), axis_cell(p.y(), origin.y(), cell_size.y(), ny)};
}

Vec2 BlockGrid::cell_min(BlockId id) const { return origin + Vec2(id.i * cell_size.x(), id.j * cell_size.y()); }

Vec2 BlockGrid::cell_max(BlockId id) const {
    return origin + Vec2((id.i + 1) * cell_size.x(), (id.j + 1) * cell_size.y());
}

bool BlockGrid::contains(BlockId id, const Vec3& p) const {
    const Vec2 lo = cell_min(id), hi = cell_max(id);
    return p.x() >= lo.x() && p.x() <= hi.x() && p.y() >= lo.y() && p.y() <= hi.y();
}

BlockGrid make_grid(const SceneBundle& bundle, int nx, int ny) {
    if (nx < 1 || ny < 1) throw ConfigError("grid dimensions must be at least 1");
    BlockGrid g;
    g.nx = nx;
    g.ny = ny;
    g.origin = bundle.bbox.min.head<2>();
    const Vec2 extent = bundle.bbox.extent().head<2>();
    for (int a = 0; a < 2; ++a) {
        const int n = a == 0 ? nx : ny;
        if (extent[a] > 0) {
            g.cell_size[a] = extent[a] / n;
            // The last cell must reach the bbox maximum despite rounding.
            const double hi = bundle.bbox.max[a];
            while (g.origin[a] + n * g.cell_size[a] < hi)
                g.cell_size[a] = std::nextafter(g.cell_size[a], std::numeric_limits<double>::infinity());
        } else if (n == 1) {
            g.cell_size[a] = 1.0;
        } else {
            throw ConfigError("degenerate bounding box cannot be split into " + std::to_string(nx) + "x" +
                              std::to_string(ny) + " blocks");
        }
    }
    return g;
}

std::vector<BlockData> partition_uniform(const SceneBundle& bundle, int nx, int ny) {
    if (bundle.cloud.empty()) throw ContractError("partition_uniform: empty point cloud");
    return partition_uniform(bundle, make_grid(bundle, nx, ny));
}

std::vector<BlockData> partition_uniform(const SceneBundle& bundle, const BlockGrid& grid) {
    std::vector<BlockData> blocks(static_cast<std::size_t>(grid.nx) * grid.ny);
    for (int j = 0; j < grid.ny; ++j)
        for (int i = 0; i < grid.nx; ++i) blocks[static_cast<std::size_t>(j) * grid.nx + i].block_id = {i, j};
    for (const auto& p : bundle.cloud) {
        const BlockId b = grid.cell_of(p.position);
        blocks[static_cast<std::size_t>(b.j) * grid.nx + b.i].points.push_back(p);
    }
    return blocks;
}

bool is_point_visible(const SparsePoint& p, const CameraView& view) {
    if (!p.track.empty()) return p.track.count(view.id) > 0;
    Vec2 uv;
    return project_to_pixel(p.position, view, uv);
}

void assign_views(std::vector<BlockData>& blocks, std::span<const CameraView> views, double tau_p,
                  std::span<const int> excluded) {
    if (!(tau_p >= 0)) throw ContractError("assign_views: tau_p must be non-negative");
    for (auto& b : blocks) {
        b.assigned_views.clear();
        b.masks.clear();
        for (const auto& v : views) {
            if (std::find(excluded.begin(), excluded.end(), v.id) != excluded.end()) continue;
            std::size_t visible = 0;
            for (const auto& p : b.points) visible += is_point_visible(p, v);
            if (static_cast<double>(visible) > tau_p) b.assigned_views.push_back(v.id);
        }
    }
}

VisibilityMask build_visibility_mask(const BlockData& block, const CameraView& view, int cell_px, int dilation_px) {
    if (cell_px < 1 || dilation_px < 0) throw ContractError("build_visibility_mask: invalid segmentation parameters");
    const int w = view.width, h = view.height;
    const int cw = (w + cell_px - 1) / cell_px, ch = (h + cell_px - 1) / cell_px;
    std::vector<std::uint8_t> cells(static_cast<std::size_t>(cw) * ch, 0);
    for (const auto& p : block.points) {
        if (!is_point_visible(p, view)) continue;
        Vec2 uv;
        if (!project_to_pixel(p.position, view, uv)) continue;
        const int px = static_cast<int>(uv.x()), py = static_cast<int>(uv.y());
        cells[static_cast<std::size_t>(py / cell_px) * cw + px / cell_px] = 1;
    }

    // Dilation with a (2r+1)^2 square, done separably.
    Bitmap occupied(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) occupied.at(x, y) = cells[static_cast<std::size_t>(y / cell_px) * cw + x / cell_px];
    Bitmap rows(w, h), dilated(w, h);
    for (int y = 0; y < h; ++y) {
        int last = -1 - dilation_px - 1;  // most recent occupied x at or left of the cursor
        std::vector<int> next(w + 1, w + dilation_px + 1);
        for (int x = w - 1; x >= 0; --x) next[x] = occupied.at(x, y) ? x : next[x + 1];
        for (int x = 0; x < w; ++x) {
            if (occupied.at(x, y)) last = x;
            rows.at(x, y) = (x - last <= dilation_px) || (next[x] - x <= dilation_px);
        }
    }
    for (int x = 0; x < w; ++x) {
        int last = -1 - dilation_px - 1;
        std::vector<int> next(h + 1, h + dilation_px + 1);
        for (int y = h - 1; y >= 0; --y) next[y] = rows.at(x, y) ? y : next[y + 1];
        for (int y = 0; y < h; ++y) {
            if (rows.at(x, y)) last = y;
            dilated.at(x, y) = (y - last <= dilation_px) || (next[y] - y <= dilation_px);
        }
    }

    // Hole filling: background is whatever zero region touches the border.
    Bitmap outside(w, h);
    std::deque<std::pair<int, int>> queue;
    auto seed = [&](int x, int y) {
        if (!dilated.at(x, y) && !outside.at(x, y)) {
            outside.at(x, y) = 1;
            queue.emplace_back(x, y);
        }
    };
    for (int x = 0; x < w; ++x) {
        seed(x, 0);
        seed(x, h - 1);
    }
    for (int y = 0; y < h; ++y) {
        seed(0, y);
        seed(w - 1, y);
    }
    while (!queue.empty()) {
        const auto [x, y] = queue.front();
        queue.pop_front();
        if (x > 0) seed(x - 1, y);
        if (x + 1 < w) seed(x + 1, y);
        if (y > 0) seed(x, y - 1);
        if (y + 1 < h) seed(x, y + 1);
    }
    VisibilityMask mask;
    mask.view_id = view.id;
    mask.block_id = block.block_id;
    mask.bitmap = Bitmap(w, h);
    for (std::size_t i = 0; i < mask.bitmap.data.size(); ++i) mask.bitmap.data[i] = outside.data[i] ? 0 : 1;
    return mask;
}

void write_partition_manifest(std::ostream& out, const BlockGrid& grid, const std::vector<BlockData>& blocks,
                              const std::vector<std::vector<std::string>>& mask_paths) {
    nlohmann::json g = {{"type", "grid"},
                        {"nx", grid.nx},
                        {"ny", grid.ny},
                        {"origin", {grid.origin.x(), grid.origin.y()}},
                        {"cell_size", {grid.cell_size.x(), grid.cell_size.y()}}};
    out << g.dump() << '\n';
    for (std::size_t n = 0; n < blocks.size(); ++n) {
        const auto& b = blocks[n];
        nlohmann::json rec = {{"type", "block"},
                              {"block", {b.block_id.i, b.block_id.j}},
                              {"point_count", b.points.size()},
                              {"views", b.assigned_views},
                              {"masks", n < mask_paths.size() ? mask_paths[n] : std::vector<std::string>{}}};
        out << rec.dump() << '\n';
    }
}

}  // namespace hug
