#pragma once

#include "hug/types.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace hug {

/// Every tunable of the pipeline. Defaults are the reference hyperparameters;
/// the flat key=value file format uses the member names as keys.
struct PipelineConfig {
    // partitioning
    double tau_p = 800;
    int grid_nx = 2;
    int grid_ny = 2;
    int mask_cell_px = 16;
    int mask_dilation_px = 16;

    // hierarchical loss
    double lambda = 0.2;
    double gamma = 0.8;
    double theta = 0.02;
    double opacity_mask_threshold = 0.5;

    // anchor lifecycle
    int window_M = 5000;
    double eps_c = 5;
    double tau_g0 = 2e-6;
    double eta = 0.8;
    double beta = 4.0;
    double level_step = 0.01;
    double guard_band = 0.1;

    // decoder
    int feature_dim = 16;
    int hidden_dim = 32;
    int k_off = 5;

    // renderer
    double near_plane = 0.01;
    double low_pass = 0.3;
    double alpha_clamp = 0.999;
    double min_transmittance = 1e-4;
    double cutoff_sigma = 3.0;
    Vec3 background = Vec3::Zero();

    // optimisation
    int iterations = 30000;
    double lr_offsets = 1e-2;
    double lr_features = 5e-3;
    double lr_scaling = 5e-3;
    double lr_decoder = 2e-3;
    std::uint64_t seed = 0;

    /// Throws ConfigError when an invariant is violated.
    void validate() const;
};

/// Applies `key=value` lines (with `#` comments) on top of `base`.
/// Unknown keys and malformed values raise ConfigError.
PipelineConfig parse_config(const std::string& text, PipelineConfig base = {});
PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base = {});
/// Serializes every key; parse_config(to_config_text(c)) reproduces c.
std::string to_config_text(const PipelineConfig& cfg);
void set_config_value(PipelineConfig& cfg, const std::string& key, const std::string& value);

}  // namespace hug
