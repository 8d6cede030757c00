#pragma once

#include "hug/scene.hpp"
#include "hug/types.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

namespace hug {

/// Level-of-detail frame of one block's octree.
struct LodContext {
    double d_max = 1.0;
    double d_min = 1.0;
    int K = 1;
    Vec3 origin = Vec3::Zero();
    double base_cell = 1.0;   // level-0 cell edge
    bool d_min_clamped = false;

    double cell_edge(int level) const { return std::ldexp(base_cell, -level); }
};

struct CellIndex {
    int level = 0;
    std::array<std::int64_t, 3> index{0, 0, 0};

    friend bool operator==(const CellIndex&, const CellIndex&) = default;
    friend auto operator<=>(const CellIndex&, const CellIndex&) = default;
};

CellIndex cell_containing(const Vec3& p, int level, const LodContext& ctx);
Vec3 cell_center(const CellIndex& cell, const LodContext& ctx);

struct AnchorStats {
    std::int64_t grad_events = 0;   // events not yet folded into level_acc
    double grad_accum = 0.0;        // running mean of the per-iteration gradient
    std::int64_t grad_samples = 0;
    std::int64_t vis_count = 0;
};

struct Anchor {
    std::uint64_t id = 0;
    BlockId block;
    int base_level = 0;
    std::int64_t level_events = 0;  // total transition events so far
    double level_acc = 0.0;         // level_events * step
    CellIndex cell;
    Vec3 position = Vec3::Zero();
    VecX feature;
    Vec3 scaling = Vec3::Ones();
    std::vector<Vec3> offsets;
    AnchorStats stats;

    int effective_level(int K) const;
};

struct AnchorSet {
    int K = 1;
    std::vector<Anchor> anchors;
    std::uint64_t next_id = 0;

    std::size_t size() const { return anchors.size(); }
};

/// Round half to even.
int round_half_even(double v);

/// d_max / d_min are the nearest-rank 0.95 / 0.05 quantiles of all
/// point-to-camera-center distances; K = round(log2(d_max/d_min)) + 1.
LodContext compute_lod_context(std::span<const SparsePoint> points, std::span<const CameraView> views);
LodContext compute_lod_context(std::span<const Vec3> points, std::span<const Vec3> camera_centers);

/// One anchor per distinct occupied cell on every level.
AnchorSet init_anchors(std::span<const Vec3> points, const LodContext& ctx, BlockId block, int feature_dim,
                       int k_off, std::uint64_t seed);

/// floor(min(max(log2(d_max/d), 0), K-1)).
int predict_level(double distance, const LodContext& ctx);

/// In front of the camera and inside the image rectangle grown by
/// `guard_band` (fraction of the image size) on each side.
bool in_frustum(const Vec3& p, const CameraView& view, double guard_band, double near_plane = 0.0);

/// Indices of anchors in the frustum whose effective level does not exceed
/// the predicted level for their distance to the camera.
std::vector<std::size_t> select_anchors(const AnchorSet& set, const CameraView& view, const LodContext& ctx,
                                        double guard_band);

/// tau_g0 * eta^floor(i / M).
double dynamic_threshold(std::int64_t iteration, double tau_g0, double eta, int window_M);

/// Folds one iteration's gradient statistic into the anchor's stats.
void record_gradient(Anchor& anchor, double delta_g, double beta, double tau_g);

/// Mean world position of the anchor's decoded Gaussians.
Vec3 mean_gaussian_position(const Anchor& anchor);

/// Spawns one child on the next finer level for every anchor whose gradient
/// mean exceeds `tau_g`, unless that cell already holds an anchor. Returns the
/// number of anchors added.
std::size_t split_anchors(AnchorSet& set, const LodContext& ctx, double tau_g, std::mt19937_64& rng);

/// level_acc += step per pending event; pending events are cleared.
void transition_levels(AnchorSet& set, double step);

/// Removes anchors with vis_count < eps_c; resets every vis_count.
std::size_t prune_by_visibility(AnchorSet& set, double eps_c);

void record_visibility(AnchorSet& set, std::span<const std::size_t> selected);

/// Binary layout (little-endian), version 1:
///   "HUGA" u32 version u32 K u64 next_id u64 count
///   per anchor: u64 id, i32 block_i, i32 block_j, i32 base_level,
///   i64 level_events, f64 level_acc, i32 cell_level, 3 x i64 cell index,
///   3 x f64 position, u32 F, F x f64 feature, 3 x f64 scaling,
///   u32 k_off, k_off x 3 x f64 offsets.
void write_anchor_set(std::ostream& out, const AnchorSet& set);
AnchorSet read_anchor_set(std::istream& in);
void save_anchor_set(const AnchorSet& set, const std::filesystem::path& path);
AnchorSet load_anchor_set(const std::filesystem::path& path);
/// Human-readable dump, one anchor per line.
void dump_anchor_text(std::ostream& out, const AnchorSet& set);

}  // namespace hug
