#include "hug/octree.hpp"

#include "hug/binary_io.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>

namespace hug {
namespace {

// Nearest-rank quantile for q = percent / 100: the ceil(q N)-th smallest value.
double nearest_rank(const std::vector<double>& sorted, int percent) {
    const std::size_t n = sorted.size();
    std::size_t rank = (static_cast<std::size_t>(percent) * n + 99) / 100;
    rank = std::clamp<std::size_t>(rank, 1, n);
    return sorted[rank - 1];
}

std::vector<Vec3> jitter_offsets(int k_off, std::mt19937_64& rng) {
    std::vector<Vec3> out(k_off);
    for (auto& o : out)
        for (int c = 0; c < 3; ++c) o[c] = uniform01(rng) - 0.5;
    return out;
}

}  // namespace

int round_half_even(double v) { return static_cast<int>(std::nearbyint(v)); }

int Anchor::effective_level(int K) const {
    const auto lifted = base_level + static_cast<std::int64_t>(std::floor(level_acc));
    return static_cast<int>(std::clamp<std::int64_t>(lifted, 0, K - 1));
}

CellIndex cell_containing(const Vec3& p, int level, const LodContext& ctx) {
    const double edge = ctx.cell_edge(level);
    CellIndex c;
    c.level = level;
    for (int a = 0; a < 3; ++a) c.index[a] = static_cast<std::int64_t>(std::floor((p[a] - ctx.origin[a]) / edge));
    return c;
}

Vec3 cell_center(const CellIndex& cell, const LodContext& ctx) {
    const double edge = ctx.cell_edge(cell.level);
    Vec3 c;
    for (int a = 0; a < 3; ++a) c[a] = ctx.origin[a] + (static_cast<double>(cell.index[a]) + 0.5) * edge;
    return c;
}

LodContext compute_lod_context(std::span<const SparsePoint> points, std::span<const CameraView> views) {
    std::vector<Vec3> pos, centers;
    pos.reserve(points.size());
    for (const auto& p : points) pos.push_back(p.position);
    for (const auto& v : views) centers.push_back(v.center());
    return compute_lod_context(pos, centers);
}

LodContext compute_lod_context(std::span<const Vec3> points, std::span<const Vec3> camera_centers) {
    if (points.empty() || camera_centers.empty())
        throw ContractError("compute_lod_context: needs at least one point and one view");
    std::vector<double> dist;
    dist.reserve(points.size() * camera_centers.size());
    Vec3 lo = points.front(), hi = points.front();
    for (const auto& p : points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
        for (const auto& c : camera_centers) dist.push_back((p - c).norm());
    }
    std::sort(dist.begin(), dist.end());
    LodContext ctx;
    ctx.d_max = nearest_rank(dist, 95);
    ctx.d_min = nearest_rank(dist, 5);
    if (!(ctx.d_max > 0)) throw ContractError("compute_lod_context: all points coincide with camera centers");
    if (!(ctx.d_min > 0)) {
        ctx.d_min = 1e-6 * ctx.d_max;
        ctx.d_min_clamped = true;
    }
    ctx.K = round_half_even(std::log2(ctx.d_max / ctx.d_min)) + 1;
    ctx.origin = lo;
    const double extent = (hi - lo).maxCoeff();
    // Smallest power of two strictly above the extent, so the half-open root cell holds every point.
    ctx.base_cell = extent > 0 ? std::ldexp(1.0, static_cast<int>(std::floor(std::log2(extent))) + 1) : 1.0;
    return ctx;
}

AnchorSet init_anchors(std::span<const Vec3> points, const LodContext& ctx, BlockId block, int feature_dim,
                       int k_off, std::uint64_t seed) {
    AnchorSet set;
    set.K = ctx.K;
    std::mt19937_64 rng(seed);
    for (int level = 0; level < ctx.K; ++level) {
        std::set<CellIndex> cells;
        for (const auto& p : points) cells.insert(cell_containing(p, level, ctx));
        for (const auto& cell : cells) {
            Anchor a;
            a.id = set.next_id++;
            a.block = block;
            a.base_level = level;
            a.cell = cell;
            a.position = cell_center(cell, ctx);
            a.feature = VecX::Zero(feature_dim);
            a.scaling = Vec3::Constant(ctx.cell_edge(level));
            a.offsets = jitter_offsets(k_off, rng);
            set.anchors.push_back(std::move(a));
        }
    }
    return set;
}

int predict_level(double distance, const LodContext& ctx) {
    const double raw = std::log2(ctx.d_max / distance);
    return static_cast<int>(std::floor(std::min(std::max(raw, 0.0), static_cast<double>(ctx.K - 1))));
}

bool in_frustum(const Vec3& p, const CameraView& view, double guard_band, double near_plane) {
    const Vec3 pc = view.to_camera(p);
    if (!(pc.z() > near_plane)) return false;
    const double u = view.fx * pc.x() / pc.z() + view.cx;
    const double v = view.fy * pc.y() / pc.z() + view.cy;
    const double gx = guard_band * view.width, gy = guard_band * view.height;
    return u >= -gx && u <= view.width + gx && v >= -gy && v <= view.height + gy;
}

std::vector<std::size_t> select_anchors(const AnchorSet& set, const CameraView& view, const LodContext& ctx,
                                        double guard_band) {
    std::vector<std::size_t> out;
    const Vec3 center = view.center();
    for (std::size_t i = 0; i < set.anchors.size(); ++i) {
        const auto& a = set.anchors[i];
        if (!in_frustum(a.position, view, guard_band)) continue;
        const double d = (a.position - center).norm();
        if (a.effective_level(set.K) <= predict_level(d, ctx)) out.push_back(i);
    }
    return out;
}

double dynamic_threshold(std::int64_t iteration, double tau_g0, double eta, int window_M) {
    if (iteration < 0 || window_M < 1) throw ContractError("dynamic_threshold: invalid iteration or window");
    return tau_g0 * std::pow(eta, static_cast<double>(iteration / window_M));
}

void record_gradient(Anchor& anchor, double delta_g, double beta, double tau_g) {
    auto& s = anchor.stats;
    ++s.grad_samples;
    s.grad_accum += (delta_g - s.grad_accum) / static_cast<double>(s.grad_samples);
    if (delta_g > beta * tau_g) ++s.grad_events;
}

Vec3 mean_gaussian_position(const Anchor& anchor) {
    if (anchor.offsets.empty()) return anchor.position;
    Vec3 mean = Vec3::Zero();
    for (const auto& o : anchor.offsets) mean += o;
    mean /= static_cast<double>(anchor.offsets.size());
    return anchor.position + mean.cwiseProduct(anchor.scaling);
}

std::size_t split_anchors(AnchorSet& set, const LodContext& ctx, double tau_g, std::mt19937_64& rng) {
    std::set<CellIndex> occupied;
    for (const auto& a : set.anchors) occupied.insert(a.cell);
    const std::size_t original = set.anchors.size();
    for (std::size_t i = 0; i < original; ++i) {
        Anchor& parent = set.anchors[i];
        const int level = parent.effective_level(set.K);
        if (!(parent.stats.grad_accum > tau_g) || level >= set.K - 1) continue;
        const CellIndex cell = cell_containing(mean_gaussian_position(parent), level + 1, ctx);
        parent.stats.grad_accum = 0.0;
        parent.stats.grad_samples = 0;
        if (!occupied.insert(cell).second) continue;
        Anchor child;
        child.id = set.next_id++;
        child.block = parent.block;
        child.base_level = level + 1;
        child.cell = cell;
        child.position = cell_center(cell, ctx);
        child.feature = parent.feature;
        child.scaling = parent.scaling * 0.5;
        child.offsets = jitter_offsets(static_cast<int>(parent.offsets.size()), rng);
        set.anchors.push_back(std::move(child));  // invalidates `parent`
    }
    return set.anchors.size() - original;
}

void transition_levels(AnchorSet& set, double step) {
    for (auto& a : set.anchors) {
        a.level_events += a.stats.grad_events;
        a.stats.grad_events = 0;
        a.level_acc = static_cast<double>(a.level_events) * step;
    }
}

std::size_t prune_by_visibility(AnchorSet& set, double eps_c) {
    const std::size_t before = set.anchors.size();
    std::erase_if(set.anchors, [eps_c](const Anchor& a) { return static_cast<double>(a.stats.vis_count) < eps_c; });
    for (auto& a : set.anchors) a.stats.vis_count = 0;
    return before - set.anchors.size();
}

void record_visibility(AnchorSet& set, std::span<const std::size_t> selected) {
    for (std::size_t i : selected) {
        if (i >= set.anchors.size()) throw ContractError("record_visibility: index out of range");
        ++set.anchors[i].stats.vis_count;
    }
}

void write_anchor_set(std::ostream& out, const AnchorSet& set) {
    using namespace binary;
    put_magic(out, "HUGA");
    put<std::uint32_t>(out, 1);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(set.K));
    put<std::uint64_t>(out, set.next_id);
    put<std::uint64_t>(out, set.anchors.size());
    for (const auto& a : set.anchors) {
        put<std::uint64_t>(out, a.id);
        put<std::int32_t>(out, a.block.i);
        put<std::int32_t>(out, a.block.j);
        put<std::int32_t>(out, a.base_level);
        put<std::int64_t>(out, a.level_events);
        put<double>(out, a.level_acc);
        put<std::int32_t>(out, a.cell.level);
        for (auto c : a.cell.index) put<std::int64_t>(out, c);
        for (int c = 0; c < 3; ++c) put<double>(out, a.position[c]);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(a.feature.size()));
        for (Eigen::Index f = 0; f < a.feature.size(); ++f) put<double>(out, a.feature[f]);
        for (int c = 0; c < 3; ++c) put<double>(out, a.scaling[c]);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(a.offsets.size()));
        for (const auto& o : a.offsets)
            for (int c = 0; c < 3; ++c) put<double>(out, o[c]);
    }
    if (!out) throw IoError("failed writing anchor set");
}

AnchorSet read_anchor_set(std::istream& in) {
    using namespace binary;
    expect_magic(in, "HUGA");
    if (const auto version = get<std::uint32_t>(in); version != 1)
        throw ParseError("unsupported anchor set version " + std::to_string(version));
    AnchorSet set;
    set.K = static_cast<int>(get<std::uint32_t>(in));
    set.next_id = get<std::uint64_t>(in);
    const auto count = get<std::uint64_t>(in);
    for (std::uint64_t n = 0; n < count; ++n) {
        Anchor a;
        a.id = get<std::uint64_t>(in);
        a.block.i = get<std::int32_t>(in);
        a.block.j = get<std::int32_t>(in);
        a.base_level = get<std::int32_t>(in);
        a.level_events = get<std::int64_t>(in);
        a.level_acc = get<double>(in);
        a.cell.level = get<std::int32_t>(in);
        for (auto& c : a.cell.index) c = get<std::int64_t>(in);
        for (int c = 0; c < 3; ++c) a.position[c] = get<double>(in);
        const auto f = get<std::uint32_t>(in);
        if (f > (1u << 20)) throw ParseError("anchor feature dimension is implausible");
        a.feature.resize(f);
        for (std::uint32_t k = 0; k < f; ++k) a.feature[k] = get<double>(in);
        for (int c = 0; c < 3; ++c) a.scaling[c] = get<double>(in);
        const auto k_off = get<std::uint32_t>(in);
        if (k_off > (1u << 20)) throw ParseError("anchor offset count is implausible");
        a.offsets.resize(k_off);
        for (auto& o : a.offsets)
            for (int c = 0; c < 3; ++c) o[c] = get<double>(in);
        set.anchors.push_back(std::move(a));
    }
    return set;
}

void save_anchor_set(const AnchorSet& set, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string());
    write_anchor_set(out, set);
}

AnchorSet load_anchor_set(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return read_anchor_set(in);
}

void dump_anchor_text(std::ostream& out, const AnchorSet& set) {
    out << "# K=" << set.K << " anchors=" << set.anchors.size() << '\n';
    out << std::setprecision(9);
    for (const auto& a : set.anchors) {
        out << "id=" << a.id << " block=" << to_string(a.block) << " level=" << a.base_level << '+' << a.level_acc
            << " eff=" << a.effective_level(set.K) << " cell=" << a.cell.level << ':' << a.cell.index[0] << ','
            << a.cell.index[1] << ',' << a.cell.index[2] << " pos=" << a.position.transpose()
            << " scaling=" << a.scaling.transpose() << " |feature|=" << a.feature.norm()
            << " vis=" << a.stats.vis_count << " grad=" << a.stats.grad_accum << '\n';
    }
}

}  // namespace hug
