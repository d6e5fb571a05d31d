#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "objdb/geometry.hpp"
#include "objdb/marching_cubes_tables.hpp"
#include "objdb/tsdf_grid.hpp"

namespace objdb {

struct SurfaceMesh {
  PointCloud cloud;  // vertices with outward normals (toward positive distance)
  std::vector<std::array<int, 3>> triangles;
};

namespace detail {

struct EdgeKey {
  VoxelIndex base;  // lower corner voxel of the edge
  int axis = 0;     // 0 = x, 1 = y, 2 = z

  bool operator==(const EdgeKey& o) const { return base == o.base && axis == o.axis; }
};

struct EdgeKeyHash {
  std::size_t operator()(const EdgeKey& k) const {
    return VoxelIndexHash{}(k.base) * 31 + static_cast<std::size_t>(k.axis);
  }
};

// Distance/observed cache for one block plus its +1 border (17^3 voxels).
struct CellCache {
  std::array<float, 17 * 17 * 17> distance;
  std::array<bool, 17 * 17 * 17> observed;

  static int index(int x, int y, int z) { return x + 17 * (y + 17 * z); }

  void fill(const TsdfGrid& grid, const VoxelIndex& block_index) {
    const VoxelIndex base{block_index.x * kBlockEdge, block_index.y * kBlockEdge,
                          block_index.z * kBlockEdge};
    const VoxelBlock* own = grid.block(block_index);
    for (int z = 0; z < 17; ++z)
      for (int y = 0; y < 17; ++y)
        for (int x = 0; x < 17; ++x) {
          TsdfVoxel v;
          if (own && x < kBlockEdge && y < kBlockEdge && z < kBlockEdge)
            v = own->voxels[x + kBlockEdge * (y + kBlockEdge * z)];
          else
            v = grid.voxel({base.x + x, base.y + y, base.z + z});
          const int i = index(x, y, z);
          distance[i] = v.distance;
          observed[i] = v.weight > 0.0f;
        }
  }
};

}  // namespace detail

// Gradient of the distance field at `p`, estimated by central differences on
// trilinear samples; falls back to one-sided differences inside the fully
// observed cell with base voxel `cell_base` when a central sample is missing.
inline Vec3 tsdf_gradient(const TsdfGrid& grid, const Vec3& p, const VoxelIndex& cell_base) {
  const double h = 0.5 * grid.voxel_size();
  Vec3 grad = Vec3::Zero();
  bool central_ok = true;
  for (int axis = 0; axis < 3 && central_ok; ++axis) {
    Vec3 lo = p, hi = p;
    lo[axis] -= h;
    hi[axis] += h;
    const auto s_lo = grid.trilinear_sample(lo);
    const auto s_hi = grid.trilinear_sample(hi);
    if (!s_lo || !s_hi) {
      central_ok = false;
      break;
    }
    grad[axis] = (s_hi->first - s_lo->first) / (2.0 * h);
  }
  if (central_ok) return grad;

  // Average the four corner-pair differences along each axis of the cell.
  double d[8];
  for (int corner = 0; corner < 8; ++corner) {
    const auto& off = mc::kCornerOffset[corner];
    d[corner] =
        grid.voxel({cell_base.x + off[0], cell_base.y + off[1], cell_base.z + off[2]}).distance;
  }
  const double vs = grid.voxel_size();
  grad.x() = ((d[1] - d[0]) + (d[2] - d[3]) + (d[5] - d[4]) + (d[6] - d[7])) / (4.0 * vs);
  grad.y() = ((d[3] - d[0]) + (d[2] - d[1]) + (d[7] - d[4]) + (d[6] - d[5])) / (4.0 * vs);
  grad.z() = ((d[4] - d[0]) + (d[5] - d[1]) + (d[6] - d[2]) + (d[7] - d[3])) / (4.0 * vs);
  return grad;
}

// Zero-isosurface triangulation of the observed region. Cells participate
// only when all 8 corner voxels are observed, so the mesh ends at the
// observation frontier. Vertices are deduplicated per grid edge and carry
// normals pointing toward positive distance (out of the object).
inline SurfaceMesh extract_surface(const TsdfGrid& grid) {
  SurfaceMesh mesh;
  std::unordered_map<detail::EdgeKey, int, detail::EdgeKeyHash> edge_vertices;
  std::vector<VoxelIndex> vertex_cells;  // generating cell per vertex, for gradient fallback

  detail::CellCache cache;
  for (const VoxelIndex& block_index : grid.sorted_block_indices()) {
    cache.fill(grid, block_index);
    const VoxelIndex block_base{block_index.x * kBlockEdge, block_index.y * kBlockEdge,
                                block_index.z * kBlockEdge};
    for (int lz = 0; lz < kBlockEdge; ++lz)
      for (int ly = 0; ly < kBlockEdge; ++ly)
        for (int lx = 0; lx < kBlockEdge; ++lx) {
          double corner_distance[8];
          bool all_observed = true;
          for (int corner = 0; corner < 8 && all_observed; ++corner) {
            const auto& off = mc::kCornerOffset[corner];
            const int ci = detail::CellCache::index(lx + off[0], ly + off[1], lz + off[2]);
            all_observed = cache.observed[ci];
            corner_distance[corner] = cache.distance[ci];
          }
          if (!all_observed) continue;

          int config = 0;
          for (int corner = 0; corner < 8; ++corner)
            if (corner_distance[corner] < 0.0) config |= 1 << corner;
          if (mc::kEdgeTable[config] == 0) continue;

          const VoxelIndex cell_base{block_base.x + lx, block_base.y + ly, block_base.z + lz};

          // Vertex index per cut edge of this cell.
          int cell_vertex[12];
          for (int edge = 0; edge < 12; ++edge) {
            if (!(mc::kEdgeTable[config] & (1 << edge))) continue;
            const int ca = mc::kEdgeCorners[edge][0];
            const int cb = mc::kEdgeCorners[edge][1];
            const auto& oa = mc::kCornerOffset[ca];
            const auto& ob = mc::kCornerOffset[cb];
            detail::EdgeKey key;
            key.base = {cell_base.x + std::min(oa[0], ob[0]), cell_base.y + std::min(oa[1], ob[1]),
                        cell_base.z + std::min(oa[2], ob[2])};
            key.axis = oa[0] != ob[0] ? 0 : (oa[1] != ob[1] ? 1 : 2);

            auto [it, inserted] = edge_vertices.try_emplace(key, -1);
            if (inserted) {
              const double da = corner_distance[ca];
              const double db = corner_distance[cb];
              const double denom = da - db;
              const double t =
                  std::abs(denom) < 1e-12 ? 0.5 : std::clamp(da / denom, 0.0, 1.0);
              const Vec3 pa = grid.voxel_center({cell_base.x + oa[0], cell_base.y + oa[1],
                                                 cell_base.z + oa[2]});
              const Vec3 pb = grid.voxel_center({cell_base.x + ob[0], cell_base.y + ob[1],
                                                 cell_base.z + ob[2]});
              it->second = static_cast<int>(mesh.cloud.points.size());
              mesh.cloud.points.push_back(pa + t * (pb - pa));
              vertex_cells.push_back(cell_base);
            }
            cell_vertex[edge] = it->second;
          }

          const auto& tris = mc::kTriTable[config];
          for (int t = 0; tris[t] != -1; t += 3)
            mesh.triangles.push_back(
                {cell_vertex[tris[t]], cell_vertex[tris[t + 1]], cell_vertex[tris[t + 2]]});
        }
  }

  mesh.cloud.normals.resize(mesh.cloud.points.size());
  for (std::size_t i = 0; i < mesh.cloud.points.size(); ++i) {
    Vec3 grad = tsdf_gradient(grid, mesh.cloud.points[i], vertex_cells[i]);
    const double norm = grad.norm();
    mesh.cloud.normals[i] = norm > 1e-12 ? Vec3(grad / norm) : Vec3(0, 0, 1);
  }
  return mesh;
}

inline double mesh_area(const SurfaceMesh& mesh) {
  double area = 0.0;
  for (const auto& tri : mesh.triangles) {
    const Vec3& a = mesh.cloud.points[tri[0]];
    const Vec3& b = mesh.cloud.points[tri[1]];
    const Vec3& c = mesh.cloud.points[tri[2]];
    area += 0.5 * (b - a).cross(c - a).norm();
  }
  return area;
}

}  // namespace objdb
