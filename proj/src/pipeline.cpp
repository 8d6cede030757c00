#include "hug/pipeline.hpp"

#include "hug/colmap.hpp"
#include "hug/image_io.hpp"
#include "hug/trainer.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

namespace hug {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::ofstream open_out(const fs::path& path) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

std::vector<json> read_jsonl(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::vector<json> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            out.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw ParseError(path.string() + ": " + e.what());
        }
    }
    return out;
}

BlockId block_of(const json& rec) { return BlockId{rec.at("block").at(0).get<int>(), rec.at("block").at(1).get<int>()}; }

}  // namespace

std::string RunDir::block_stem(BlockId id) { return "block_" + std::to_string(id.i) + "_" + std::to_string(id.j); }

fs::path RunDir::block_model(BlockId id) const { return blocks() / (block_stem(id) + ".model"); }

fs::path RunDir::block_metrics(BlockId id) const { return blocks() / (block_stem(id) + ".metrics.jsonl"); }

void write_synthetic_run(const RunDir& run, const SyntheticScene& scene) {
    write_colmap_text(scene.bundle, run.sparse());
    fs::create_directories(run.images());
    for (const auto& v : scene.bundle.views)
        if (v.pixels) write_image(*v.pixels, run.images() / v.name);
    auto out = open_out(run.holdout());
    for (int id : scene.holdout) out << id << '\n';
}

SceneBundle load_run_bundle(const RunDir& run) {
    SceneBundle bundle = load_colmap_text(run.sparse(), run.images());
    bundle.validate();
    return bundle;
}

std::vector<int> load_holdout(const RunDir& run) {
    std::vector<int> ids;
    std::ifstream in(run.holdout());
    if (!in) return ids;
    int id;
    while (in >> id) ids.push_back(id);
    if (!in.eof()) throw ParseError("malformed " + run.holdout().string());
    return ids;
}

PartitionState run_partition(const RunDir& run, const PipelineConfig& cfg) {
    cfg.validate();
    const SceneBundle bundle = load_run_bundle(run);
    const std::vector<int> holdout = load_holdout(run);
    PartitionState part;
    if (bundle.cloud.empty()) throw ContractError("partition: the point cloud is empty");
    part.grid = make_grid(bundle, cfg.grid_nx, cfg.grid_ny);
    part.blocks = partition_uniform(bundle, part.grid);
    assign_views(part.blocks, bundle.views, cfg.tau_p, holdout);

    const fs::path mask_dir = run.root / "partition" / "masks";
    fs::create_directories(mask_dir);
    std::vector<std::vector<std::string>> mask_paths;
    for (auto& b : part.blocks) {
        auto& paths = mask_paths.emplace_back();
        for (int vid : b.assigned_views) {
            b.masks.push_back(build_visibility_mask(b, *bundle.find_view(vid), cfg.mask_cell_px, cfg.mask_dilation_px));
            const std::string rel = "partition/masks/" + RunDir::block_stem(b.block_id) + "_view_" +
                                    std::to_string(vid) + ".png";
            write_bitmap_png(b.masks.back().bitmap, run.root / rel);
            paths.push_back(rel);
        }
    }
    auto out = open_out(run.partition_manifest());
    write_partition_manifest(out, part.grid, part.blocks, mask_paths);
    return part;
}

PartitionState load_partition(const RunDir& run, const SceneBundle& bundle) {
    const auto records = read_jsonl(run.partition_manifest());
    if (records.empty() || records.front().value("type", "") != "grid")
        throw ParseError("partition manifest does not start with a grid record");
    PartitionState part;
    const auto& g = records.front();
    part.grid.nx = g.at("nx").get<int>();
    part.grid.ny = g.at("ny").get<int>();
    part.grid.origin = Vec2(g.at("origin").at(0).get<double>(), g.at("origin").at(1).get<double>());
    part.grid.cell_size = Vec2(g.at("cell_size").at(0).get<double>(), g.at("cell_size").at(1).get<double>());
    part.blocks = partition_uniform(bundle, part.grid);
    for (std::size_t n = 1; n < records.size(); ++n) {
        const auto& rec = records[n];
        const BlockId id = block_of(rec);
        if (id.i < 0 || id.j < 0 || id.i >= part.grid.nx || id.j >= part.grid.ny)
            throw ParseError("partition manifest names block " + to_string(id) + " outside the grid");
        auto& b = part.blocks[static_cast<std::size_t>(id.j) * part.grid.nx + id.i];
        b.assigned_views = rec.at("views").get<std::vector<int>>();
        const auto masks = rec.at("masks").get<std::vector<std::string>>();
        if (masks.size() != b.assigned_views.size())
            throw ParseError("partition manifest: block " + to_string(id) + " has mismatched mask list");
        for (std::size_t m = 0; m < masks.size(); ++m) {
            const CameraView* v = bundle.find_view(b.assigned_views[m]);
            if (!v) throw ParseError("partition manifest references unknown view");
            VisibilityMask mask;
            mask.view_id = v->id;
            mask.block_id = id;
            mask.bitmap = read_bitmap_png(run.root / masks[m]);
            if (mask.bitmap.width != v->width || mask.bitmap.height != v->height)
                throw ParseError("mask " + masks[m] + " does not match its view");
            b.masks.push_back(std::move(mask));
        }
    }
    return part;
}

BlockModel run_train_block(const RunDir& run, const SceneBundle& bundle, const PartitionState& part, BlockId id,
                           const PipelineConfig& cfg) {
    if (id.i < 0 || id.j < 0 || id.i >= part.grid.nx || id.j >= part.grid.ny)
        throw ContractError("block " + to_string(id) + " is outside the grid");
    const BlockData& block = part.blocks[static_cast<std::size_t>(id.j) * part.grid.nx + id.i];
    auto metrics = open_out(run.block_metrics(id));
    const fs::path ckpt_dir = run.checkpoints() / RunDir::block_stem(id);
    TrainCallbacks cb;
    cb.on_metrics = [&](const std::string& line) { metrics << line << '\n'; };
    cb.on_checkpoint = [&](const TrainState& s) {
        fs::create_directories(ckpt_dir);
        save_block_model(s.model, ckpt_dir / ("iter_" + std::to_string(s.iteration) + ".model"));
    };
    BlockModel model = train_block(bundle, block, part.grid, cfg, cb);
    metrics.close();
    fs::create_directories(run.blocks());
    save_block_model(model, run.block_model(id));
    return model;
}

std::vector<BlockOutcome> run_train_all(const RunDir& run, const PipelineConfig& cfg, int jobs) {
    cfg.validate();
    const SceneBundle bundle = load_run_bundle(run);
    const PartitionState part = load_partition(run, bundle);
    std::vector<BlockOutcome> outcomes(part.blocks.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t n = next++; n < part.blocks.size(); n = next++) {
            const BlockData& b = part.blocks[n];
            auto& out = outcomes[n];
            out.block = b.block_id;
            if (b.points.empty() || b.assigned_views.empty()) {
                out.status = BlockOutcome::Status::skipped;
                out.message = b.points.empty() ? "no points" : "no training views";
                std::error_code ec;
                fs::remove(run.block_model(b.block_id), ec);
                continue;
            }
            try {
                run_train_block(run, bundle, part, b.block_id, cfg);
            } catch (const std::exception& e) {
                out.status = BlockOutcome::Status::failed;
                out.message = e.what();
            }
        }
    };
    const int n_workers = std::max(1, std::min<int>(jobs, static_cast<int>(part.blocks.size())));
    std::vector<std::thread> pool;
    for (int w = 1; w < n_workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    return outcomes;
}

FusedScene run_fuse(const RunDir& run, const PipelineConfig& cfg) {
    std::vector<BlockModel> models;
    std::vector<std::size_t> totals;
    if (fs::exists(run.blocks()))
        for (const auto& entry : fs::directory_iterator(run.blocks()))
            if (entry.path().extension() == ".model") models.push_back(load_block_model(entry.path()));
    std::sort(models.begin(), models.end(), [](const auto& a, const auto& b) { return a.block_id < b.block_id; });
    for (const auto& m : models) totals.push_back(m.anchors.size());
    FusedScene scene = fuse(std::move(models), cfg.background);
    auto out = open_out(run.fused_manifest());
    for (std::size_t n = 0; n < scene.blocks.size(); ++n) {
        const auto& b = scene.blocks[n];
        const std::string stem = RunDir::block_stem(b.block_id);
        const std::string anchors_rel = "fused/" + stem + ".anchors";
        save_anchor_set(b.anchors, run.root / anchors_rel);
        out << json{{"block", {b.block_id.i, b.block_id.j}},
                    {"model", "blocks/" + stem + ".model"},
                    {"anchors", anchors_rel},
                    {"retained", b.anchors.size()},
                    {"total", totals[n]}}
                   .dump()
            << '\n';
    }
    return scene;
}

FusedScene load_fused(const RunDir& run, const PipelineConfig& cfg) {
    std::vector<BlockModel> models;
    for (const auto& rec : read_jsonl(run.fused_manifest())) {
        BlockModel m = load_block_model(run.root / rec.at("model").get<std::string>());
        m.anchors = load_anchor_set(run.root / rec.at("anchors").get<std::string>());
        models.push_back(std::move(m));
    }
    FusedScene scene;
    scene.background = cfg.background;
    scene.blocks = std::move(models);
    return scene;
}

EvalReport run_eval(const RunDir& run, const PipelineConfig& cfg) {
    const SceneBundle bundle = load_run_bundle(run);
    const FusedScene scene = load_fused(run, cfg);
    std::vector<CameraView> views;
    for (int id : load_holdout(run)) {
        const CameraView* v = bundle.find_view(id);
        if (!v) throw ContractError("holdout view " + std::to_string(id) + " is not in the bundle");
        views.push_back(*v);
    }
    const EvalReport report = evaluate(scene, views, RenderSettings::from_config(cfg), cfg.guard_band);
    auto out = open_out(run.eval_report());
    write_eval_report(out, report);
    return report;
}

}  // namespace hug
