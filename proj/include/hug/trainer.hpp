#pragma once

#include "hug/config.hpp"
#include "hug/loss.hpp"
#include "hug/model.hpp"
#include "hug/partition.hpp"
#include "hug/scene.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace hug {

/// Adaptive-moment state of one anchor's parameters.
struct AnchorMoments {
    VecX m_feature, v_feature;
    std::vector<Vec3> m_offsets, v_offsets;
    Vec3 m_log_scaling = Vec3::Zero(), v_log_scaling = Vec3::Zero();
    std::int64_t steps = 0;
};

struct TrainState {
    std::int64_t iteration = 0;
    BlockModel model;
    std::map<std::uint64_t, AnchorMoments> anchor_moments;
    DecoderWeights m_decoder, v_decoder;
    std::int64_t decoder_steps = 0;
    std::mt19937_64 rng;
    std::vector<double> loss_history;
    int lifecycle_passes = 0;
};

struct StepReport {
    LossBreakdown loss;
    std::size_t anchors = 0;
    std::size_t selected = 0;
    double tau_g = 0;
};

/// Builds the untrained model of a block: LOD context from the block points
/// and its assigned views, octree anchors and decoder weights.
TrainState init_train_state(const SceneBundle& bundle, const BlockData& block, const BlockGrid& grid,
                            const PipelineConfig& cfg);

/// One optimisation step on `view`, which must be assigned to `block`.
/// `block_mask` gates every loss term; the view must carry ground-truth pixels.
StepReport train_step(TrainState& state, const CameraView& view, const Bitmap& block_mask, const BlockData& block,
                      const PipelineConfig& cfg);

/// Prune, split and level transition at the end of a window, in that order.
void lifecycle_pass(TrainState& state, const PipelineConfig& cfg);

struct TrainCallbacks {
    std::function<void(const std::string& json_line)> on_metrics;
    std::function<void(const TrainState& state)> on_checkpoint;  // every window_M iterations
};

/// Trains one block for cfg.iterations steps, cycling over its views in a
/// seeded shuffled order. Missing masks are built from the configuration.
BlockModel train_block(const SceneBundle& bundle, const BlockData& block, const BlockGrid& grid,
                       const PipelineConfig& cfg, const TrainCallbacks& callbacks = {});

/// Same as train_block but returns the full final state.
TrainState train_block_state(const SceneBundle& bundle, const BlockData& block, const BlockGrid& grid,
                             const PipelineConfig& cfg, const TrainCallbacks& callbacks = {});

/// JSON line of one step's metrics.
std::string metrics_record(BlockId block, std::int64_t iteration, int view_id, const StepReport& report);

/// Mean of the last `window` entries ending at `end` (exclusive).
double smoothed_loss(const std::vector<double>& history, std::size_t end, std::size_t window);

}  // namespace hug
