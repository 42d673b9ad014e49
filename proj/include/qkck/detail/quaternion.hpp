#pragma once

#include <Eigen/Dense>

namespace qkck::detail {

// Hamilton quaternion with components (w, x, y, z).
struct Quat {
    double w = 0, x = 0, y = 0, z = 0;

    Quat() = default;
    Quat(double w_, double x_, double y_, double z_) : w(w_), x(x_), y(y_), z(z_) {}

    Quat conj() const { return {w, -x, -y, -z}; }

    Quat operator*(const Quat& o) const {
        return {w * o.w - x * o.x - y * o.y - z * o.z,
                w * o.x + x * o.w + y * o.z - z * o.y,
                w * o.y - x * o.z + y * o.w + z * o.x,
                w * o.z + x * o.y - y * o.x + z * o.w};
    }
    Quat operator+(const Quat& o) const { return {w + o.w, x + o.x, y + o.y, z + o.z}; }
    Quat operator-(const Quat& o) const { return {w - o.w, x - o.x, y - o.y, z - o.z}; }
    Quat operator-() const { return {-w, -x, -y, -z}; }
};

// 4x4 matrix of v -> u * v acting on component columns (w, x, y, z).
inline Eigen::Matrix4d left_mult(const Quat& u) {
    Eigen::Matrix4d m;
    m << u.w, -u.x, -u.y, -u.z,
         u.x,  u.w, -u.z,  u.y,
         u.y,  u.z,  u.w, -u.x,
         u.z, -u.y,  u.x,  u.w;
    return m;
}

} // namespace qkck::detail
