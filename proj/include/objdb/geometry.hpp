#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace objdb {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Rigid body transform, kept orthonormal by storing the rotation as a unit
// quaternion. Composition and point mapping follow the usual convention:
// (a * b) maps a point first through b, then through a.
struct RigidTransform {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  static RigidTransform from_translation(const Vec3& t) {
    RigidTransform out;
    out.translation = t;
    return out;
  }

  static RigidTransform from_parts(const Eigen::Quaterniond& q, const Vec3& t) {
    RigidTransform out;
    out.rotation = q.normalized();
    out.translation = t;
    return out;
  }

  static RigidTransform from_matrix(const Eigen::Matrix4d& m) {
    RigidTransform out;
    out.rotation = Eigen::Quaterniond(Mat3(m.block<3, 3>(0, 0))).normalized();
    out.translation = m.block<3, 1>(0, 3);
    return out;
  }

  // Rotation by `angle_rad` about `axis` through point `pivot`.
  static RigidTransform about_point(const Vec3& axis, double angle_rad, const Vec3& pivot) {
    Eigen::Quaterniond q(Eigen::AngleAxisd(angle_rad, axis.normalized()));
    RigidTransform out;
    out.rotation = q;
    out.translation = pivot - q * pivot;
    return out;
  }

  Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }

  RigidTransform operator*(const RigidTransform& rhs) const {
    RigidTransform out;
    out.rotation = (rotation * rhs.rotation).normalized();
    out.translation = rotation * rhs.translation + translation;
    return out;
  }

  RigidTransform inverse() const {
    RigidTransform out;
    out.rotation = rotation.conjugate();
    out.translation = -(out.rotation * translation);
    return out;
  }

  Mat3 rotation_matrix() const { return rotation.toRotationMatrix(); }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.block<3, 3>(0, 0) = rotation_matrix();
    m.block<3, 1>(0, 3) = translation;
    return m;
  }

  bool is_orthonormal(double tol = 1e-9) const {
    const Mat3 r = rotation_matrix();
    return (r * r.transpose() - Mat3::Identity()).norm() < tol && r.determinant() > 0.0;
  }
};

// Geodesic angle of the rotation part, in radians.
inline double rotation_angle(const RigidTransform& t) {
  const double w = std::min(1.0, std::abs(t.rotation.normalized().w()));
  return 2.0 * std::acos(w);
}

inline double rad_to_deg(double rad) { return rad * 180.0 / M_PI; }
inline double deg_to_rad(double deg) { return deg * M_PI / 180.0; }

// Point cloud with optional per-point unit normals. `normals` is either empty
// or the same length as `points`.
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;

  bool has_normals() const { return !normals.empty(); }
  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  PointCloud transformed(const RigidTransform& t) const {
    PointCloud out;
    out.points.reserve(points.size());
    for (const Vec3& p : points) out.points.push_back(t * p);
    out.normals.reserve(normals.size());
    const Mat3 r = t.rotation_matrix();
    for (const Vec3& n : normals) out.normals.push_back(r * n);
    return out;
  }

  void append(const PointCloud& other) {
    points.insert(points.end(), other.points.begin(), other.points.end());
    normals.insert(normals.end(), other.normals.begin(), other.normals.end());
  }
};

struct Aabb {
  Vec3 min = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 max = Vec3::Constant(-std::numeric_limits<double>::infinity());

  bool empty() const { return !(min.x() <= max.x()); }

  void expand(const Vec3& p) {
    min = min.cwiseMin(p);
    max = max.cwiseMax(p);
  }

  void expand(const Aabb& other) {
    if (other.empty()) return;
    expand(other.min);
    expand(other.max);
  }

  void inflate(double margin) {
    min.array() -= margin;
    max.array() += margin;
  }

  bool contains(const Vec3& p) const {
    return !empty() && (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
};

}  // namespace objdb
