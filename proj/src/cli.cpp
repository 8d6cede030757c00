#include "hug/cli.hpp"

#include "hug/config.hpp"
#include "hug/image_io.hpp"
#include "hug/pipeline.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <ostream>

namespace hug {
namespace {

struct ConfigFlags {
    std::string config_file;
    std::vector<std::string> overrides;  // key=value

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_file, "key=value config file, applied after all other flags")
            ->check(CLI::ExistingFile);
        cmd->add_option("--set", overrides, "override one config key (key=value), repeatable");
    }

    // Defaults, then individual flags, then --set, then the config file.
    PipelineConfig resolve(PipelineConfig cfg) const {
        for (const auto& kv : overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
            set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
        }
        if (!config_file.empty()) cfg = load_config(config_file, cfg);
        cfg.validate();
        return cfg;
    }
};

BlockId parse_block(const std::string& text) {
    const auto comma = text.find(',');
    if (comma == std::string::npos) throw ConfigError("--block expects i,j");
    try {
        return BlockId{std::stoi(text.substr(0, comma)), std::stoi(text.substr(comma + 1))};
    } catch (const std::exception&) {
        throw ConfigError("--block expects i,j, got '" + text + "'");
    }
}

RunDir existing_run(const std::string& dir) {
    if (!std::filesystem::is_directory(dir)) throw IoError("run directory " + dir + " does not exist");
    return RunDir{dir};
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Block-wise hierarchical Gaussian splatting on the CPU"};
    app.require_subcommand(1);

    SyntheticSpec spec;
    std::string synth_out;
    auto* synth = app.add_subcommand("synth", "write a synthetic run directory");
    synth->add_option("--out", synth_out, "output run directory")->required();
    synth->add_option("--seed", spec.seed, "random seed");
    synth->add_option("--points", spec.num_points, "number of points");
    synth->add_option("--views", spec.num_views, "number of training views");
    synth->add_option("--holdout", spec.num_holdout, "number of held-out views");
    synth->add_option("--width", spec.image_width, "image width");
    synth->add_option("--height", spec.image_height, "image height");

    std::string run_dir;
    PipelineConfig flags;
    int nx = flags.grid_nx, ny = flags.grid_ny;
    double tau_p = flags.tau_p;
    ConfigFlags part_cfg;
    auto* partition = app.add_subcommand("partition", "partition the scene and assign training views");
    partition->add_option("--in", run_dir, "run directory")->required();
    partition->add_option("--nx", nx, "blocks along x");
    partition->add_option("--ny", ny, "blocks along y");
    partition->add_option("--tau-p", tau_p, "visible-point threshold for view assignment");
    part_cfg.attach(partition);

    int iterations = flags.iterations;
    std::uint64_t seed = flags.seed;
    std::string block_text;
    ConfigFlags train_cfg;
    auto* train_one = app.add_subcommand("train-block", "train one block");
    train_one->add_option("--in", run_dir, "run directory")->required();
    train_one->add_option("--block", block_text, "block index i,j")->required();
    train_one->add_option("--iterations", iterations, "training iterations");
    train_one->add_option("--seed", seed, "random seed");
    train_cfg.attach(train_one);

    int jobs = 1;
    ConfigFlags all_cfg;
    auto* train_all = app.add_subcommand("train-all", "train every block on a worker pool");
    train_all->add_option("--in", run_dir, "run directory")->required();
    train_all->add_option("--jobs", jobs, "parallel workers")->check(CLI::PositiveNumber);
    train_all->add_option("--iterations", iterations, "training iterations");
    train_all->add_option("--seed", seed, "random seed");
    all_cfg.attach(train_all);

    ConfigFlags fuse_cfg;
    auto* fuse_cmd = app.add_subcommand("fuse", "refilter and fuse the trained blocks");
    fuse_cmd->add_option("--in", run_dir, "run directory")->required();
    fuse_cfg.attach(fuse_cmd);

    int view_id = 0;
    std::string image_out;
    ConfigFlags render_cfg;
    auto* render_cmd = app.add_subcommand("render", "render the fused scene from one view");
    render_cmd->add_option("--in", run_dir, "run directory")->required();
    render_cmd->add_option("--view", view_id, "view id")->required();
    render_cmd->add_option("--out", image_out, "output image (.png or .ppm)")->required();
    render_cfg.attach(render_cmd);

    ConfigFlags eval_cfg;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate the fused scene on the held-out views");
    eval_cmd->add_option("--in", run_dir, "run directory")->required();
    eval_cfg.attach(eval_cmd);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (synth->parsed()) {
            const SyntheticScene scene = generate_synthetic_scene(spec);
            write_synthetic_run(RunDir{synth_out}, scene);
            out << "wrote " << scene.bundle.views.size() << " views and " << scene.bundle.cloud.size()
                << " points to " << synth_out << '\n';
        } else if (partition->parsed()) {
            flags.grid_nx = nx;
            flags.grid_ny = ny;
            flags.tau_p = tau_p;
            const PartitionState part = run_partition(existing_run(run_dir), part_cfg.resolve(flags));
            for (const auto& b : part.blocks)
                out << "block " << to_string(b.block_id) << ": " << b.points.size() << " points, "
                    << b.assigned_views.size() << " views\n";
        } else if (train_one->parsed()) {
            flags.iterations = iterations;
            flags.seed = seed;
            const PipelineConfig cfg = train_cfg.resolve(flags);
            const RunDir run = existing_run(run_dir);
            const SceneBundle bundle = load_run_bundle(run);
            const PartitionState part = load_partition(run, bundle);
            const BlockModel model = run_train_block(run, bundle, part, parse_block(block_text), cfg);
            out << "block " << to_string(model.block_id) << ": " << model.anchors.size() << " anchors\n";
        } else if (train_all->parsed()) {
            flags.iterations = iterations;
            flags.seed = seed;
            const auto outcomes = run_train_all(existing_run(run_dir), all_cfg.resolve(flags), jobs);
            bool failed = false;
            for (const auto& o : outcomes) {
                switch (o.status) {
                case BlockOutcome::Status::trained: out << "block " << to_string(o.block) << ": trained\n"; break;
                case BlockOutcome::Status::skipped:
                    out << "block " << to_string(o.block) << ": skipped (" << o.message << ")\n";
                    break;
                case BlockOutcome::Status::failed:
                    err << "block " << to_string(o.block) << ": failed: " << o.message << '\n';
                    failed = true;
                    break;
                }
            }
            return failed ? 1 : 0;
        } else if (fuse_cmd->parsed()) {
            const FusedScene scene = run_fuse(existing_run(run_dir), fuse_cfg.resolve(flags));
            out << "fused " << scene.blocks.size() << " blocks, " << scene.anchor_count() << " anchors\n";
        } else if (render_cmd->parsed()) {
            const PipelineConfig cfg = render_cfg.resolve(flags);
            const RunDir run = existing_run(run_dir);
            const SceneBundle bundle = load_run_bundle(run);
            const CameraView* view = bundle.find_view(view_id);
            if (!view) throw ContractError("unknown view " + std::to_string(view_id));
            const FusedScene scene = load_fused(run, cfg);
            write_image(render_global(scene, *view, RenderSettings::from_config(cfg), cfg.guard_band).rgb, image_out);
        } else if (eval_cmd->parsed()) {
            const EvalReport report = run_eval(existing_run(run_dir), eval_cfg.resolve(flags));
            out << "mean PSNR " << report.mean_psnr << " dB, mean SSIM " << report.mean_ssim << " over "
                << report.views.size() << " views\n";
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace hug
