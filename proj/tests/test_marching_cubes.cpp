#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>

#include "objdb/marching_cubes.hpp"

using namespace objdb;

namespace {

GridLayout default_layout() {
  GridLayout layout;
  layout.voxel_size = 0.01;
  layout.truncation_distance = 0.03;
  return layout;
}

TsdfGrid grid_from_sdf(const std::function<double(const Vec3&)>& sdf, const Vec3& lo,
                       const Vec3& hi, const GridLayout& layout) {
  TsdfGrid grid(layout);
  const VoxelIndex vlo = grid.voxel_index(lo);
  const VoxelIndex vhi = grid.voxel_index(hi);
  for (std::int32_t z = vlo.z; z <= vhi.z; ++z)
    for (std::int32_t y = vlo.y; y <= vhi.y; ++y)
      for (std::int32_t x = vlo.x; x <= vhi.x; ++x) {
        const VoxelIndex v{x, y, z};
        const double d =
            std::clamp(sdf(grid.voxel_center(v)), -layout.truncation_distance,
                       layout.truncation_distance);
        grid.integrate_voxel(v, static_cast<float>(d), 1.0f);
      }
  return grid;
}

// Map of undirected edge -> number of incident triangles.
std::map<std::pair<int, int>, int> edge_use_counts(const SurfaceMesh& mesh) {
  std::map<std::pair<int, int>, int> counts;
  for (const auto& tri : mesh.triangles)
    for (int e = 0; e < 3; ++e) {
      int a = tri[e], b = tri[(e + 1) % 3];
      if (a > b) std::swap(a, b);
      ++counts[{a, b}];
    }
  return counts;
}

}  // namespace

TEST_CASE("lookup tables are internally consistent", "[marching_cubes]") {
  for (int config = 0; config < 256; ++config) {
    // Complementary configurations cut the same edges.
    CHECK(mc::kEdgeTable[config] == mc::kEdgeTable[255 - config]);

    // The triangle list uses exactly the edges flagged in the edge table.
    std::set<int> used;
    int count = 0;
    for (int i = 0; i < 16 && mc::kTriTable[config][i] != -1; ++i) {
      const int edge = mc::kTriTable[config][i];
      REQUIRE(edge >= 0);
      REQUIRE(edge < 12);
      used.insert(edge);
      ++count;
    }
    REQUIRE(count % 3 == 0);
    std::set<int> flagged;
    for (int e = 0; e < 12; ++e)
      if (mc::kEdgeTable[config] & (1 << e)) flagged.insert(e);
    CHECK(used == flagged);

    // Independently recompute which edges must be cut from the corner signs.
    std::set<int> expected;
    for (int e = 0; e < 12; ++e) {
      const bool a = config & (1 << mc::kEdgeCorners[e][0]);
      const bool b = config & (1 << mc::kEdgeCorners[e][1]);
      if (a != b) expected.insert(e);
    }
    CHECK(flagged == expected);

    // No triangle is degenerate at the table level.
    for (int i = 0; mc::kTriTable[config][i] != -1; i += 3) {
      CHECK(mc::kTriTable[config][i] != mc::kTriTable[config][i + 1]);
      CHECK(mc::kTriTable[config][i + 1] != mc::kTriTable[config][i + 2]);
      CHECK(mc::kTriTable[config][i] != mc::kTriTable[config][i + 2]);
    }
  }
}

TEST_CASE("sphere surface is extracted where the field crosses zero", "[marching_cubes]") {
  const Vec3 center(0.004, -0.007, 0.0035);  // generic offset, off-lattice
  const double radius = 0.09;
  const GridLayout layout = default_layout();
  const TsdfGrid grid = grid_from_sdf(
      [&](const Vec3& p) { return (p - center).norm() - radius; },
      center - Vec3::Constant(radius + 0.05), center + Vec3::Constant(radius + 0.05), layout);

  const SurfaceMesh mesh = extract_surface(grid);
  REQUIRE(mesh.cloud.points.size() > 500);
  REQUIRE(mesh.cloud.normals.size() == mesh.cloud.points.size());
  REQUIRE(!mesh.triangles.empty());

  for (const Vec3& p : mesh.cloud.points) {
    // On the true surface to within interpolation error.
    CHECK(std::abs((p - center).norm() - radius) < 1.5e-3);
    // The interpolated field vanishes at extracted vertices.
    const auto sample = grid.trilinear_sample(p);
    REQUIRE(sample.has_value());
    CHECK(std::abs(sample->first) < 1e-6);
  }

  // Normals point radially outward (toward positive distance).
  for (std::size_t i = 0; i < mesh.cloud.points.size(); ++i) {
    const Vec3 radial = (mesh.cloud.points[i] - center).normalized();
    CHECK(mesh.cloud.normals[i].dot(radial) > 0.99);
    CHECK(mesh.cloud.normals[i].norm() == Catch::Approx(1.0).margin(1e-9));
  }

  // Closed surface: every edge borders exactly two triangles, Euler
  // characteristic of a topological sphere.
  const auto counts = edge_use_counts(mesh);
  for (const auto& [edge, count] : counts) CHECK(count == 2);
  const auto V = static_cast<long>(mesh.cloud.points.size());
  const auto E = static_cast<long>(counts.size());
  const auto F = static_cast<long>(mesh.triangles.size());
  CHECK(V - E + F == 2);

  // Area close to the analytic sphere area.
  CHECK(mesh_area(mesh) == Catch::Approx(4.0 * M_PI * radius * radius).epsilon(0.02));
}

TEST_CASE("box surface spans the box extents", "[marching_cubes]") {
  const Vec3 half(0.06, 0.04, 0.05);
  const GridLayout layout = default_layout();
  const auto box_sdf = [&](const Vec3& p) {
    const Vec3 q = p.cwiseAbs() - half;
    const Vec3 outside = q.cwiseMax(0.0);
    return outside.norm() + std::min(0.0, q.maxCoeff());
  };
  const TsdfGrid grid = grid_from_sdf(box_sdf, -half - Vec3::Constant(0.05),
                                      half + Vec3::Constant(0.05), layout);
  const SurfaceMesh mesh = extract_surface(grid);
  REQUIRE(!mesh.cloud.points.empty());

  Aabb bounds;
  for (const Vec3& p : mesh.cloud.points) bounds.expand(p);
  for (int axis = 0; axis < 3; ++axis) {
    CHECK(bounds.max[axis] == Catch::Approx(half[axis]).margin(2e-3));
    CHECK(bounds.min[axis] == Catch::Approx(-half[axis]).margin(2e-3));
  }
  // Watertight here too.
  for (const auto& [edge, count] : edge_use_counts(mesh)) CHECK(count == 2);
}

TEST_CASE("fields without a zero crossing produce no surface", "[marching_cubes]") {
  const GridLayout layout = default_layout();
  TsdfGrid positive(layout);
  for (std::int32_t z = 0; z < 8; ++z)
    for (std::int32_t y = 0; y < 8; ++y)
      for (std::int32_t x = 0; x < 8; ++x)
        positive.integrate_voxel({x, y, z}, 0.02f, 1.0f);
  CHECK(extract_surface(positive).cloud.points.empty());
  CHECK(extract_surface(positive).triangles.empty());

  const TsdfGrid empty(layout);
  CHECK(extract_surface(empty).cloud.points.empty());
}

TEST_CASE("cells missing corner observations are skipped", "[marching_cubes]") {
  const GridLayout layout = default_layout();
  TsdfGrid grid(layout);
  // A zero crossing between two voxels, but no fully observed cell around it.
  grid.integrate_voxel({0, 0, 0}, -0.01f, 1.0f);
  grid.integrate_voxel({1, 0, 0}, 0.01f, 1.0f);
  CHECK(extract_surface(grid).cloud.points.empty());
}

TEST_CASE("extraction is deterministic", "[marching_cubes]") {
  const Vec3 center(0.01, 0.0, -0.005);
  const GridLayout layout = default_layout();
  const TsdfGrid grid = grid_from_sdf(
      [&](const Vec3& p) { return (p - center).norm() - 0.05; },
      center - Vec3::Constant(0.1), center + Vec3::Constant(0.1), layout);
  const SurfaceMesh a = extract_surface(grid);
  const SurfaceMesh b = extract_surface(grid);
  REQUIRE(a.cloud.points.size() == b.cloud.points.size());
  REQUIRE(a.triangles == b.triangles);
  for (std::size_t i = 0; i < a.cloud.points.size(); ++i)
    REQUIRE(a.cloud.points[i] == b.cloud.points[i]);
}
