#include "hug/scene.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <limits>
#include <unordered_set>

namespace hug {

std::string to_string(const BlockId& id) { return std::to_string(id.i) + "_" + std::to_string(id.j); }

Mat3 quaternion_to_matrix(const Vec4& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

Vec4 matrix_to_quaternion(const Mat3& r) {
    Eigen::Quaterniond q(r);
    q.normalize();
    Vec4 out(q.w(), q.x(), q.y(), q.z());
    if (out[0] < 0) out = -out;
    return out;
}

Mat3 CameraView::rotation_matrix() const { return quaternion_to_matrix(rotation); }

Vec3 CameraView::center() const { return -(rotation_matrix().transpose() * translation); }

Vec3 CameraView::to_camera(const Vec3& world) const { return rotation_matrix() * world + translation; }

void CameraView::validate() const {
    if (!(fx > 0) || !(fy > 0)) throw ContractError("view " + std::to_string(id) + ": focal lengths must be positive");
    if (width < 1 || height < 1) throw ContractError("view " + std::to_string(id) + ": empty image size");
    if (std::abs(rotation.norm() - 1.0) > 1e-9)
        throw ContractError("view " + std::to_string(id) + ": rotation quaternion is not unit");
    if (pixels && (pixels->width != width || pixels->height != height))
        throw ContractError("view " + std::to_string(id) + ": image dimensions do not match camera");
}

const CameraView* SceneBundle::find_view(int id) const {
    for (const auto& v : views)
        if (v.id == id) return &v;
    return nullptr;
}

void SceneBundle::update_bbox() {
    if (cloud.empty()) {
        bbox = Aabb{};
        bbox_degenerate = true;
        return;
    }
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (const auto& p : cloud) {
        lo = lo.cwiseMin(p.position);
        hi = hi.cwiseMax(p.position);
    }
    bbox = Aabb{lo, hi};
    bbox_degenerate = (hi - lo).maxCoeff() <= 0.0;
}

void SceneBundle::validate() const {
    std::unordered_set<int> view_ids;
    for (const auto& v : views) {
        v.validate();
        if (!view_ids.insert(v.id).second) throw ContractError("duplicate view id " + std::to_string(v.id));
    }
    std::unordered_set<long> point_ids;
    for (const auto& p : cloud) {
        if (!p.position.allFinite()) throw ContractError("point " + std::to_string(p.id) + " is not finite");
        if (!point_ids.insert(p.id).second) throw ContractError("duplicate point id " + std::to_string(p.id));
        for (int v : p.track)
            if (!view_ids.count(v))
                throw ContractError("point " + std::to_string(p.id) + " tracks unknown view " + std::to_string(v));
    }
}

CameraView look_at(int id, const Vec3& eye, const Vec3& target, const Vec3& world_up, int width, int height,
                   double fx, double fy) {
    const Vec3 forward = (target - eye).normalized();
    Vec3 right = forward.cross(world_up);
    if (right.norm() < 1e-12) right = forward.cross(Vec3::UnitX());
    right.normalize();
    const Vec3 down = forward.cross(right);
    Mat3 r;  // rows are camera axes expressed in world coordinates
    r.row(0) = right.transpose();
    r.row(1) = down.transpose();
    r.row(2) = forward.transpose();
    CameraView v;
    v.id = id;
    v.width = width;
    v.height = height;
    v.fx = fx;
    v.fy = fy;
    v.cx = width / 2.0;
    v.cy = height / 2.0;
    v.rotation = matrix_to_quaternion(r);
    v.translation = -(quaternion_to_matrix(v.rotation) * eye);
    return v;
}

}  // namespace hug
