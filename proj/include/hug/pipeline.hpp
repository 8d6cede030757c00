#pragma once

#include "hug/config.hpp"
#include "hug/fusion.hpp"
#include "hug/model.hpp"
#include "hug/partition.hpp"
#include "hug/scene.hpp"
#include "hug/synthetic.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace hug {

/// File layout of a run directory. Every path recorded in a manifest is
/// relative to the run root.
///   sparse/                  COLMAP text model
///   images/                  ground-truth images named in images.txt
///   holdout.txt              ids of views excluded from training, one per line
///   partition/manifest.jsonl grid record + one record per block
///   partition/masks/         visibility masks (PNG)
///   blocks/                  trained block models and per-block metrics
///   checkpoints/             block models every window_M iterations
///   fused/                   refiltered anchor sets + manifest.jsonl
///   eval/report.jsonl        per-view and mean metrics
struct RunDir {
    std::filesystem::path root;

    std::filesystem::path sparse() const { return root / "sparse"; }
    std::filesystem::path images() const { return root / "images"; }
    std::filesystem::path holdout() const { return root / "holdout.txt"; }
    std::filesystem::path partition_manifest() const { return root / "partition" / "manifest.jsonl"; }
    std::filesystem::path blocks() const { return root / "blocks"; }
    std::filesystem::path checkpoints() const { return root / "checkpoints"; }
    std::filesystem::path fused_manifest() const { return root / "fused" / "manifest.jsonl"; }
    std::filesystem::path eval_report() const { return root / "eval" / "report.jsonl"; }

    static std::string block_stem(BlockId id);
    std::filesystem::path block_model(BlockId id) const;
    std::filesystem::path block_metrics(BlockId id) const;
};

/// Writes the synthetic scene as a run directory.
void write_synthetic_run(const RunDir& run, const SyntheticScene& scene);

/// The run's bundle with images loaded.
SceneBundle load_run_bundle(const RunDir& run);
std::vector<int> load_holdout(const RunDir& run);

struct PartitionState {
    BlockGrid grid;
    std::vector<BlockData> blocks;  // with points, views and masks
};

/// Partitions, assigns training views (holdout excluded), builds masks and
/// writes the manifest.
PartitionState run_partition(const RunDir& run, const PipelineConfig& cfg);

/// Rebuilds the partition recorded in the manifest.
PartitionState load_partition(const RunDir& run, const SceneBundle& bundle);

/// Trains one block; writes its model, metrics and checkpoints.
BlockModel run_train_block(const RunDir& run, const SceneBundle& bundle, const PartitionState& part, BlockId id,
                           const PipelineConfig& cfg);

struct BlockOutcome {
    BlockId block;
    enum class Status { trained, skipped, failed } status = Status::trained;
    std::string message;
};

/// Trains every block on a pool of `jobs` workers. Blocks without points or
/// training views are skipped; a failing block does not stop the others.
std::vector<BlockOutcome> run_train_all(const RunDir& run, const PipelineConfig& cfg, int jobs);

/// Refilters every trained block and writes the fused manifest.
FusedScene run_fuse(const RunDir& run, const PipelineConfig& cfg);
FusedScene load_fused(const RunDir& run, const PipelineConfig& cfg);

/// Evaluates the fused scene on the holdout views and writes the report.
EvalReport run_eval(const RunDir& run, const PipelineConfig& cfg);

}  // namespace hug
