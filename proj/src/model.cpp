#include "hug/model.hpp"

#include "hug/binary_io.hpp"

#include <fstream>

namespace hug {

std::uint64_t splat_id(BlockId block, std::uint64_t anchor_id, int slot) {
    if (anchor_id >= (std::uint64_t{1} << 40) || slot < 0 || slot > 255)
        throw ContractError("splat_id: anchor id or slot out of range");
    const auto b = (static_cast<std::uint64_t>(block.j & 0xFF) << 8) | static_cast<std::uint64_t>(block.i & 0xFF);
    return (b << 48) | (anchor_id << 8) | static_cast<std::uint64_t>(slot);
}

DecodedView decode_view(const BlockModel& model, const CameraView& view, double guard_band) {
    DecodedView out;
    out.selected = select_anchors(model.anchors, view, model.ctx, guard_band);
    const Vec3 center = view.center();
    out.gaussians.reserve(out.selected.size() * model.weights.k_off);
    for (std::size_t idx : out.selected) {
        const Anchor& a = model.anchors.anchors[idx];
        auto decoded = decode(a, center, model.weights);
        for (std::size_t k = 0; k < decoded.size(); ++k) {
            out.gaussians.push_back(decoded[k]);
            out.ids.push_back(splat_id(model.block_id, a.id, static_cast<int>(k)));
        }
    }
    return out;
}

FrameBuffer render_model(const BlockModel& model, const CameraView& view, const RenderSettings& settings,
                         double guard_band) {
    const DecodedView dv = decode_view(model, view, guard_band);
    return render(dv.gaussians, dv.ids, view, settings).fb;
}

void write_block_model(std::ostream& out, const BlockModel& m) {
    using namespace binary;
    put_magic(out, "HUGB");
    put<std::uint32_t>(out, 1);
    put<std::int32_t>(out, m.block_id.i);
    put<std::int32_t>(out, m.block_id.j);
    for (double v : {m.bounds_min.x(), m.bounds_min.y(), m.bounds_max.x(), m.bounds_max.y()}) put<double>(out, v);
    put<double>(out, m.ctx.d_max);
    put<double>(out, m.ctx.d_min);
    put<std::int32_t>(out, m.ctx.K);
    for (int c = 0; c < 3; ++c) put<double>(out, m.ctx.origin[c]);
    put<double>(out, m.ctx.base_cell);
    put<std::uint8_t>(out, m.ctx.d_min_clamped ? 1 : 0);
    write_anchor_set(out, m.anchors);
    write_decoder(out, m.weights);
}

BlockModel read_block_model(std::istream& in) {
    using namespace binary;
    expect_magic(in, "HUGB");
    if (const auto version = get<std::uint32_t>(in); version != 1)
        throw ParseError("unsupported block model version " + std::to_string(version));
    BlockModel m;
    m.block_id.i = get<std::int32_t>(in);
    m.block_id.j = get<std::int32_t>(in);
    m.bounds_min.x() = get<double>(in);
    m.bounds_min.y() = get<double>(in);
    m.bounds_max.x() = get<double>(in);
    m.bounds_max.y() = get<double>(in);
    m.ctx.d_max = get<double>(in);
    m.ctx.d_min = get<double>(in);
    m.ctx.K = get<std::int32_t>(in);
    for (int c = 0; c < 3; ++c) m.ctx.origin[c] = get<double>(in);
    m.ctx.base_cell = get<double>(in);
    m.ctx.d_min_clamped = get<std::uint8_t>(in) != 0;
    m.anchors = read_anchor_set(in);
    m.weights = read_decoder(in);
    return m;
}

void save_block_model(const BlockModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string());
    write_block_model(out, model);
}

BlockModel load_block_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return read_block_model(in);
}

}  // namespace hug
