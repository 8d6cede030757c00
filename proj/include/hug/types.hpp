#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace hug {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;  // quaternions are stored (w, x, y, z)
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat23 = Eigen::Matrix<double, 2, 3>;
using VecX = Eigen::VectorXd;

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file or text.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration or invalid combination of parameters.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A caller broke an operation's precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Linear RGB image, channels interleaved, values nominally in [0,1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, double fill = 0.0)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

    double& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    double at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    bool same_shape(const Image& o) const { return width == o.width && height == o.height; }
};

/// Single-channel {0,1} bitmap.
struct Bitmap {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    Bitmap() = default;
    Bitmap(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

    std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
    std::size_t count() const {
        std::size_t n = 0;
        for (auto v : data) n += v != 0;
        return n;
    }
};

/// Grid index of a block in the ground-plane partition.
struct BlockId {
    int i = 0;
    int j = 0;
    friend bool operator==(const BlockId&, const BlockId&) = default;
    friend auto operator<=>(const BlockId&, const BlockId&) = default;
};

std::string to_string(const BlockId& id);

/// Deterministic uniform double in [0,1) from a 64-bit engine (independent of
/// the standard library's distribution implementations).
template <typename Engine>
double uniform01(Engine& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace hug
