#include <catch2/catch_amalgamated.hpp>

#include "objdb/geometry.hpp"

using namespace objdb;

TEST_CASE("rigid transform composes and inverts", "[geometry]") {
  const RigidTransform a = RigidTransform::from_parts(
      Eigen::Quaterniond(Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized())), Vec3(0.1, -0.2, 0.3));
  const RigidTransform b = RigidTransform::from_parts(
      Eigen::Quaterniond(Eigen::AngleAxisd(-1.2, Vec3(0, 1, -1).normalized())), Vec3(2, 0, -1));
  const Vec3 p(0.4, -1.1, 2.2);

  REQUIRE(((a * b) * p - a * (b * p)).norm() < 1e-12);
  REQUIRE(((a * a.inverse()) * p - p).norm() < 1e-12);
  REQUIRE((a.inverse() * (a * p) - p).norm() < 1e-12);
  REQUIRE(a.is_orthonormal());
  REQUIRE((a * b).is_orthonormal());
}

TEST_CASE("matrix round trip preserves the transform", "[geometry]") {
  const RigidTransform t = RigidTransform::from_parts(
      Eigen::Quaterniond(Eigen::AngleAxisd(2.1, Vec3(-1, 0.5, 0.2).normalized())),
      Vec3(0.03, 0.04, -0.05));
  const RigidTransform back = RigidTransform::from_matrix(t.matrix());
  const Vec3 p(1, 2, 3);
  REQUIRE((t * p - back * p).norm() < 1e-12);
}

TEST_CASE("rotation about a pivot keeps the pivot fixed", "[geometry]") {
  const Vec3 pivot(0.2, -0.4, 1.0);
  const RigidTransform t = RigidTransform::about_point(Vec3(0, 0, 1), deg_to_rad(90.0), pivot);
  REQUIRE((t * pivot - pivot).norm() < 1e-12);
  // A point one unit along +x from the pivot lands one unit along +y.
  REQUIRE((t * (pivot + Vec3(1, 0, 0)) - (pivot + Vec3(0, 1, 0))).norm() < 1e-12);
  REQUIRE(rotation_angle(t) == Catch::Approx(deg_to_rad(90.0)).margin(1e-12));
}

TEST_CASE("rotation angle of identity is zero", "[geometry]") {
  REQUIRE(rotation_angle(RigidTransform::identity()) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("point cloud transform moves points and rotates normals", "[geometry]") {
  PointCloud cloud;
  cloud.points = {Vec3(1, 0, 0), Vec3(0, 2, 0)};
  cloud.normals = {Vec3(1, 0, 0), Vec3(0, 0, 1)};
  const RigidTransform t =
      RigidTransform::from_parts(Eigen::Quaterniond(Eigen::AngleAxisd(M_PI / 2, Vec3(0, 0, 1))),
                                 Vec3(0, 0, 5));
  const PointCloud moved = cloud.transformed(t);
  REQUIRE((moved.points[0] - Vec3(0, 1, 5)).norm() < 1e-12);
  REQUIRE((moved.normals[0] - Vec3(0, 1, 0)).norm() < 1e-12);
  REQUIRE((moved.normals[1] - Vec3(0, 0, 1)).norm() < 1e-12);  // translation leaves normals alone
}

TEST_CASE("aabb expand and containment", "[geometry]") {
  Aabb box;
  REQUIRE(box.empty());
  box.expand(Vec3(0, 0, 0));
  box.expand(Vec3(1, 2, -3));
  REQUIRE(!box.empty());
  REQUIRE(box.contains(Vec3(0.5, 1.0, -1.0)));
  REQUIRE(!box.contains(Vec3(2, 0, 0)));
  box.inflate(1.0);
  REQUIRE(box.contains(Vec3(2, 0, 0)));
}
