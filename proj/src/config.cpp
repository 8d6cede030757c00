#include "hug/config.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <variant>

namespace hug {
namespace {

using Field = std::variant<double PipelineConfig::*, int PipelineConfig::*, std::uint64_t PipelineConfig::*,
                           Vec3 PipelineConfig::*>;

struct Entry {
    const char* key;
    Field field;
};

const Entry kEntries[] = {
    {"tau_p", &PipelineConfig::tau_p},
    {"grid_nx", &PipelineConfig::grid_nx},
    {"grid_ny", &PipelineConfig::grid_ny},
    {"mask_cell_px", &PipelineConfig::mask_cell_px},
    {"mask_dilation_px", &PipelineConfig::mask_dilation_px},
    {"lambda", &PipelineConfig::lambda},
    {"gamma", &PipelineConfig::gamma},
    {"theta", &PipelineConfig::theta},
    {"opacity_mask_threshold", &PipelineConfig::opacity_mask_threshold},
    {"window_M", &PipelineConfig::window_M},
    {"eps_c", &PipelineConfig::eps_c},
    {"tau_g0", &PipelineConfig::tau_g0},
    {"eta", &PipelineConfig::eta},
    {"beta", &PipelineConfig::beta},
    {"level_step", &PipelineConfig::level_step},
    {"guard_band", &PipelineConfig::guard_band},
    {"feature_dim", &PipelineConfig::feature_dim},
    {"hidden_dim", &PipelineConfig::hidden_dim},
    {"k_off", &PipelineConfig::k_off},
    {"near_plane", &PipelineConfig::near_plane},
    {"low_pass", &PipelineConfig::low_pass},
    {"alpha_clamp", &PipelineConfig::alpha_clamp},
    {"min_transmittance", &PipelineConfig::min_transmittance},
    {"cutoff_sigma", &PipelineConfig::cutoff_sigma},
    {"background", &PipelineConfig::background},
    {"iterations", &PipelineConfig::iterations},
    {"lr_offsets", &PipelineConfig::lr_offsets},
    {"lr_features", &PipelineConfig::lr_features},
    {"lr_scaling", &PipelineConfig::lr_scaling},
    {"lr_decoder", &PipelineConfig::lr_decoder},
    {"seed", &PipelineConfig::seed},
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double out = 0;
    try {
        out = std::stod(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != v.size() || v.empty()) throw ConfigError("config key '" + key + "': not a number: " + v);
    return out;
}

long long parse_integer(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    long long out = 0;
    try {
        out = std::stoll(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != v.size() || v.empty()) throw ConfigError("config key '" + key + "': not an integer: " + v);
    return out;
}

}  // namespace

void set_config_value(PipelineConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& e : kEntries) {
        if (key != e.key) continue;
        std::visit(
            [&](auto member) {
                using T = std::remove_cvref_t<decltype(cfg.*member)>;
                if constexpr (std::is_same_v<T, double>) {
                    cfg.*member = parse_double(key, value);
                } else if constexpr (std::is_same_v<T, int>) {
                    cfg.*member = static_cast<int>(parse_integer(key, value));
                } else if constexpr (std::is_same_v<T, std::uint64_t>) {
                    const long long v = parse_integer(key, value);
                    if (v < 0) throw ConfigError("config key '" + key + "' must be non-negative");
                    cfg.*member = static_cast<std::uint64_t>(v);
                } else {
                    std::istringstream in(value);
                    Vec3 v;
                    std::string a, b, c, extra;
                    if (!(in >> a >> b >> c) || (in >> extra))
                        throw ConfigError("config key '" + key + "' expects three numbers");
                    v << parse_double(key, a), parse_double(key, b), parse_double(key, c);
                    cfg.*member = v;
                }
            },
            e.field);
        return;
    }
    throw ConfigError("unknown config key '" + key + "'");
}

PipelineConfig parse_config(const std::string& text, PipelineConfig base) {
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
        set_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    base.validate();
    return base;
}

PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), std::move(base));
}

std::string to_config_text(const PipelineConfig& cfg) {
    std::ostringstream out;
    out << std::setprecision(17);
    for (const auto& e : kEntries) {
        out << e.key << " = ";
        std::visit(
            [&](auto member) {
                using T = std::remove_cvref_t<decltype(cfg.*member)>;
                if constexpr (std::is_same_v<T, Vec3>) {
                    const Vec3& v = cfg.*member;
                    out << v[0] << ' ' << v[1] << ' ' << v[2];
                } else {
                    out << cfg.*member;
                }
            },
            e.field);
        out << '\n';
    }
    return out.str();
}

void PipelineConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (std::abs(lambda + gamma - 1.0) > 1e-9) fail("lambda + gamma must equal 1");
    if (!(eta > 0 && eta < 1)) fail("eta must lie in (0,1)");
    if (!(beta > 1)) fail("beta must be greater than 1");
    for (double v : {tau_p, theta, eps_c, tau_g0, opacity_mask_threshold, lambda, gamma, level_step, guard_band,
                     near_plane, low_pass, min_transmittance, lr_offsets, lr_features, lr_scaling, lr_decoder})
        if (!(v >= 0)) fail("thresholds, weights and learning rates must be non-negative");
    if (opacity_mask_threshold > 1) fail("opacity_mask_threshold must lie in [0,1]");
    if (!(alpha_clamp > 0 && alpha_clamp < 1)) fail("alpha_clamp must lie in (0,1)");
    if (!(cutoff_sigma > 0)) fail("cutoff_sigma must be positive");
    if (grid_nx < 1 || grid_ny < 1) fail("grid dimensions must be at least 1");
    if (mask_cell_px < 1 || mask_dilation_px < 0) fail("invalid mask segmentation parameters");
    if (window_M < 1) fail("window_M must be at least 1");
    if (feature_dim < 1 || hidden_dim < 1 || k_off < 1) fail("decoder dimensions must be positive");
    if (iterations < 0) fail("iterations must be non-negative");
}

}  // namespace hug
