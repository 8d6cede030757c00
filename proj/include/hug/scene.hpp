#pragma once

#include "hug/types.hpp"

#include <optional>
#include <set>
#include <string>
#include <vector>

namespace hug {

/// Pinhole camera with a world-to-camera pose and an optional image.
struct CameraView {
    int id = 0;
    int width = 1;
    int height = 1;
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
    Vec4 rotation{1.0, 0.0, 0.0, 0.0};  // world->camera, (w, x, y, z)
    Vec3 translation = Vec3::Zero();   // world->camera
    std::string name;
    std::optional<Image> pixels;

    Mat3 rotation_matrix() const;
    /// Camera center in world coordinates.
    Vec3 center() const;
    Vec3 to_camera(const Vec3& world) const;
    /// Throws ContractError when an invariant is broken.
    void validate() const;
};

struct SparsePoint {
    long id = 0;
    Vec3 position = Vec3::Zero();
    Vec3 color = Vec3::Zero();
    std::set<int> track;  // ids of views observing the point
};

struct Aabb {
    Vec3 min = Vec3::Zero();
    Vec3 max = Vec3::Zero();

    bool contains(const Vec3& p) const {
        return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
    }
    Vec3 extent() const { return max - min; }
};

struct SceneBundle {
    std::vector<CameraView> views;
    std::vector<SparsePoint> cloud;
    Aabb bbox;
    bool bbox_degenerate = false;
    std::vector<std::string> warnings;

    const CameraView* find_view(int id) const;
    /// Recomputes bbox and the degenerate flag from the cloud.
    void update_bbox();
    void validate() const;
};

/// Rotation matrix of a unit quaternion (w, x, y, z).
Mat3 quaternion_to_matrix(const Vec4& q);
/// Unit quaternion (w, x, y, z) of a rotation matrix.
Vec4 matrix_to_quaternion(const Mat3& r);

/// World-to-camera pose looking from `eye` toward `target`; camera +z forward,
/// +y down in the image.
CameraView look_at(int id, const Vec3& eye, const Vec3& target, const Vec3& world_up, int width, int height,
                   double fx, double fy);

}  // namespace hug
