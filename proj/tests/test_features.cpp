#include <catch2/catch_amalgamated.hpp>

#include <objdb/features.hpp>
#include <objdb/geometry.hpp>
#include <objdb/kdtree.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

using namespace objdb;

namespace {

// Deterministic jitter keeps sample configurations generic: grid-aligned
// clouds otherwise produce pair distances sitting exactly on search-radius
// boundaries and exactly-degenerate angular ties (e.g. two perpendicular
// normals both at 90 degrees to the connecting line), whose float-level
// resolution is not rotation-invariant.
struct Jitter {
  std::mt19937_64 rng;
  std::uniform_real_distribution<double> dist;
  Jitter(std::uint64_t seed, double amplitude) : rng(seed), dist(-amplitude, amplitude) {}
  double operator()() { return dist(rng); }
};

// Axis-aligned box surface with outward normals, sampled on a per-face grid
// and jittered in all three coordinates.
PointCloud box_cloud(const Vec3& half, double step, double jitter_amplitude = 0.0,
                     std::uint64_t seed = 41) {
  PointCloud cloud;
  Jitter jitter(seed, jitter_amplitude);
  for (int axis = 0; axis < 3; ++axis) {
    const int u_axis = (axis + 1) % 3;
    const int v_axis = (axis + 2) % 3;
    for (int side = -1; side <= 1; side += 2) {
      const int nu = static_cast<int>(std::round(2.0 * half[u_axis] / step));
      const int nv = static_cast<int>(std::round(2.0 * half[v_axis] / step));
      for (int iu = 0; iu <= nu; ++iu) {
        for (int iv = 0; iv <= nv; ++iv) {
          Vec3 p;
          p[axis] = side * half[axis] + jitter();
          p[u_axis] = -half[u_axis] + iu * step + jitter();
          p[v_axis] = -half[v_axis] + iv * step + jitter();
          Vec3 n = Vec3::Zero();
          n[axis] = side;
          cloud.points.push_back(p);
          cloud.normals.push_back(n);
        }
      }
    }
  }
  return cloud;
}

// Fibonacci-spiral sphere samples with radial normals.
PointCloud sphere_cloud(double radius, int count, const Vec3& center = Vec3::Zero()) {
  PointCloud cloud;
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < count; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / count;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * i;
    const Vec3 n(r * std::cos(phi), r * std::sin(phi), z);
    cloud.points.push_back(center + radius * n);
    cloud.normals.push_back(n);
  }
  return cloud;
}

// Square patch of the z = height plane with +z normals.
PointCloud plane_patch(double size, double step, double height = 0.0,
                       double jitter_amplitude = 0.0, std::uint64_t seed = 43) {
  PointCloud cloud;
  Jitter jitter(seed, jitter_amplitude);
  const int n = static_cast<int>(std::round(size / step));
  for (int ix = 0; ix <= n; ++ix) {
    for (int iy = 0; iy <= n; ++iy) {
      const double x = -size / 2 + ix * step + (ix > 0 && ix < n ? jitter() : 0.0);
      const double y = -size / 2 + iy * step + (iy > 0 && iy < n ? jitter() : 0.0);
      cloud.points.push_back(Vec3(x, y, height));
      cloud.normals.push_back(Vec3::UnitZ());
    }
  }
  return cloud;
}

double chi_squared(const Descriptor& a, const Descriptor& b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = a[i] + b[i];
    if (denom > 0.0) sum += (a[i] - b[i]) * (a[i] - b[i]) / denom;
  }
  return sum;
}

int nearest_point_index(const PointCloud& cloud, const Vec3& target) {
  const KdTree3 tree(cloud.points);
  return tree.nearest(target);
}

}  // namespace

TEST_CASE("planarity check separates planes from curved surfaces", "[features]") {
  const PointCloud plane = plane_patch(0.5, 0.01);
  CHECK(planarity_check(plane));

  const PointCloud sphere = sphere_cloud(0.2, 2000);
  CHECK_FALSE(planarity_check(sphere));

  // Same seed, same answer, bit for bit.
  DatabaseConfig cfg;
  const PlaneFit a = fit_plane_ransac(sphere, cfg.plane_inlier_distance, cfg.plane_iterations,
                                      cfg.plane_seed);
  const PlaneFit b = fit_plane_ransac(sphere, cfg.plane_inlier_distance, cfg.plane_iterations,
                                      cfg.plane_seed);
  CHECK(a.normal == b.normal);
  CHECK(a.offset == b.offset);
  CHECK(a.inlier_count == b.inlier_count);

  PointCloud tiny;
  tiny.points = {Vec3::Zero(), Vec3::UnitX()};
  CHECK_THROWS_AS(planarity_check(tiny), FeatureError);
}

TEST_CASE("ransac plane matches an exhaustive search on a small noisy cloud", "[features]") {
  // 55 points on a plane plus 5 bumps 5 cm above it (8 percent outliers).
  PointCloud cloud;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> coord(-0.25, 0.25);
  for (int i = 0; i < 55; ++i) {
    cloud.points.push_back(Vec3(coord(rng), coord(rng), 0.2));
  }
  for (int i = 0; i < 5; ++i) {
    cloud.points.push_back(Vec3(coord(rng), coord(rng), 0.25));
  }

  // Exhaustive oracle: best inlier count over every point triple.
  const double t_plane = DatabaseConfig{}.plane_inlier_distance;
  int best_exhaustive = 0;
  const int n = static_cast<int>(cloud.size());
  for (int a = 0; a < n; ++a) {
    for (int b = a + 1; b < n; ++b) {
      for (int c = b + 1; c < n; ++c) {
        Vec3 normal =
            (cloud.points[b] - cloud.points[a]).cross(cloud.points[c] - cloud.points[a]);
        if (normal.norm() < 1e-12) continue;
        normal.normalize();
        const double offset = -normal.dot(cloud.points[a]);
        int count = 0;
        for (const Vec3& p : cloud.points) {
          if (std::abs(normal.dot(p) + offset) <= t_plane) ++count;
        }
        best_exhaustive = std::max(best_exhaustive, count);
      }
    }
  }
  REQUIRE(best_exhaustive == 55);

  DatabaseConfig cfg;
  const PlaneFit fit = fit_plane_ransac(cloud, cfg.plane_inlier_distance, cfg.plane_iterations,
                                        cfg.plane_seed);
  CHECK(fit.inlier_count == best_exhaustive);
  CHECK(planarity_check(cloud, cfg));  // 55/60 > 0.9
}

TEST_CASE("cube corners are all detected as keypoints", "[features]") {
  const Vec3 half(0.15, 0.15, 0.15);
  const PointCloud cloud = box_cloud(half, 0.006, 0.0015);
  const std::vector<Vec3> keypoints = detect_keypoints(cloud, 0.01);
  REQUIRE_FALSE(keypoints.empty());

  DatabaseConfig cfg;
  for (int sx = -1; sx <= 1; sx += 2) {
    for (int sy = -1; sy <= 1; sy += 2) {
      for (int sz = -1; sz <= 1; sz += 2) {
        const Vec3 corner(sx * half.x(), sy * half.y(), sz * half.z());
        double best = std::numeric_limits<double>::infinity();
        for (const Vec3& kp : keypoints) best = std::min(best, (kp - corner).norm());
        INFO("corner " << corner.transpose());
        CHECK(best <= cfg.harris_radius);
      }
    }
  }
}

TEST_CASE("keypoints are repeatable under rigid motion", "[features]") {
  const PointCloud cloud = box_cloud(Vec3(0.15, 0.12, 0.09), 0.006, 0.0015);
  const RigidTransform t = RigidTransform::from_parts(
      Eigen::Quaterniond(Eigen::AngleAxisd(deg_to_rad(40.0), Vec3(1, 2, 3).normalized())),
      Vec3(0.3, -0.2, 0.5));
  const std::vector<Vec3> kp_a = detect_keypoints(cloud, 0.01);
  const std::vector<Vec3> kp_b = detect_keypoints(cloud.transformed(t), 0.01);
  REQUIRE_FALSE(kp_a.empty());
  REQUIRE_FALSE(kp_b.empty());

  DatabaseConfig cfg;
  auto covered_fraction = [&](const std::vector<Vec3>& from, const std::vector<Vec3>& to,
                              const RigidTransform& map) {
    int hit = 0;
    for (const Vec3& kp : from) {
      const Vec3 mapped = map * kp;
      for (const Vec3& other : to) {
        if ((mapped - other).norm() <= cfg.iss_non_max_radius) {
          ++hit;
          break;
        }
      }
    }
    return static_cast<double>(hit) / from.size();
  };
  CHECK(covered_fraction(kp_a, kp_b, t) >= 0.7);
  CHECK(covered_fraction(kp_b, kp_a, t.inverse()) >= 0.7);
}

TEST_CASE("flat patches produce no corner responses", "[features]") {
  const PointCloud plane = plane_patch(0.3, 0.006, 0.1, 0.0015);
  const KdTree3 tree(plane.points);
  CHECK(harris_keypoint_indices(plane, tree).empty());
  CHECK(iss_keypoint_indices(plane, tree).empty());
}

TEST_CASE("plane descriptor mass sits in the zero-angle bins", "[features]") {
  const PointCloud plane = plane_patch(0.5, 0.01);
  const std::vector<Vec3> keypoints = {Vec3(0.0, 0.0, 0.0)};
  const std::vector<Descriptor> descriptors = describe_keypoints(plane, keypoints);
  REQUIRE(descriptors.size() == 1);

  const Descriptor& d = descriptors[0];
  double total = 0.0;
  for (double b : d) total += b;
  CHECK(total == Catch::Approx(1.0).epsilon(1e-9));

  // All normal pairs are parallel: every angular feature is exactly zero,
  // which lands in the central bin of each 11-bin block.
  const double central = d[5] + d[16] + d[27];
  CHECK(central >= 0.999);
}

TEST_CASE("descriptors are invariant under rigid motion", "[features]") {
  const PointCloud cloud = box_cloud(Vec3(0.15, 0.12, 0.09), 0.006, 0.0015);
  const RigidTransform t = RigidTransform::from_parts(
      Eigen::Quaterniond(Eigen::AngleAxisd(deg_to_rad(-35.0), Vec3(2, -1, 1).normalized())),
      Vec3(-0.4, 0.7, 0.2));
  const PointCloud moved = cloud.transformed(t);

  const std::vector<Vec3> kp_a = detect_keypoints(cloud, 0.01);
  const std::vector<Vec3> kp_b = detect_keypoints(moved, 0.01);
  REQUIRE_FALSE(kp_a.empty());
  REQUIRE(kp_a.size() == kp_b.size());
  for (std::size_t i = 0; i < kp_a.size(); ++i) {
    REQUIRE((t * kp_a[i] - kp_b[i]).norm() < 1e-9);
  }

  const std::vector<Descriptor> d_a = describe_keypoints(cloud, kp_a);
  const std::vector<Descriptor> d_b = describe_keypoints(moved, kp_b);
  REQUIRE(d_a.size() == d_b.size());
  for (std::size_t i = 0; i < d_a.size(); ++i) {
    for (std::size_t bin = 0; bin < d_a[i].size(); ++bin) {
      INFO("keypoint " << i << " bin " << bin);
      CHECK(std::abs(d_a[i][bin] - d_b[i][bin]) <= 1e-6);
    }
  }
}

TEST_CASE("descriptors separate spheres from boxes", "[features]") {
  const PointCloud sphere = sphere_cloud(0.2, 3000);
  const PointCloud box = box_cloud(Vec3(0.15, 0.15, 0.15), 0.006, 0.0015);

  // Forced keypoints: four well-separated sphere points, four box face
  // centers (descriptor computation does not require detection).
  std::vector<Vec3> sphere_kp;
  for (const Vec3& target : {Vec3(0, 0, 0.2), Vec3(0.2, 0, 0), Vec3(0, 0.2, 0), Vec3(0, 0, -0.2)}) {
    sphere_kp.push_back(sphere.points[static_cast<std::size_t>(nearest_point_index(sphere, target))]);
  }
  std::vector<Vec3> box_kp;
  for (const Vec3& target :
       {Vec3(0, 0, 0.15), Vec3(0, 0, -0.15), Vec3(0.15, 0, 0), Vec3(0, 0.15, 0)}) {
    box_kp.push_back(box.points[static_cast<std::size_t>(nearest_point_index(box, target))]);
  }

  const std::vector<Descriptor> sphere_d = describe_keypoints(sphere, sphere_kp);
  const std::vector<Descriptor> box_d = describe_keypoints(box, box_kp);

  double max_intra = 0.0;
  for (std::size_t i = 0; i < sphere_d.size(); ++i) {
    for (std::size_t j = i + 1; j < sphere_d.size(); ++j) {
      max_intra = std::max(max_intra, chi_squared(sphere_d[i], sphere_d[j]));
    }
  }
  for (std::size_t i = 0; i < box_d.size(); ++i) {
    for (std::size_t j = i + 1; j < box_d.size(); ++j) {
      max_intra = std::max(max_intra, chi_squared(box_d[i], box_d[j]));
    }
  }
  double min_cross = std::numeric_limits<double>::infinity();
  for (const Descriptor& s : sphere_d) {
    for (const Descriptor& b : box_d) {
      min_cross = std::min(min_cross, chi_squared(s, b));
    }
  }
  CHECK(min_cross > max_intra);
}

TEST_CASE("feature extraction validates its inputs", "[features]") {
  PointCloud no_normals;
  no_normals.points = {Vec3::Zero(), Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
  CHECK_THROWS_AS(detect_keypoints(no_normals, 0.01), FeatureError);
  CHECK_THROWS_AS(describe_keypoints(no_normals, {Vec3::Zero()}), FeatureError);

  PointCloud empty;
  CHECK_THROWS_AS(describe_keypoints(empty, {Vec3::Zero()}), FeatureError);
}
