#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "objdb/geometry.hpp"

namespace objdb {

struct GridError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TsdfVoxel {
  float distance = 0.0f;  // truncated signed distance, meters; negative behind the surface
  float weight = 0.0f;    // observation confidence; 0 = unobserved
};

struct VoxelIndex {
  std::int32_t x = 0, y = 0, z = 0;

  bool operator==(const VoxelIndex& o) const { return x == o.x && y == o.y && z == o.z; }
  bool operator!=(const VoxelIndex& o) const { return !(*this == o); }
  bool operator<(const VoxelIndex& o) const {
    if (x != o.x) return x < o.x;
    if (y != o.y) return y < o.y;
    return z < o.z;
  }
};

struct VoxelIndexHash {
  std::size_t operator()(const VoxelIndex& v) const {
    return static_cast<std::size_t>(v.x) * 73856093u ^ static_cast<std::size_t>(v.y) * 19349663u ^
           static_cast<std::size_t>(v.z) * 83492791u;
  }
};

inline constexpr int kBlockEdge = 16;
inline constexpr int kBlockVolume = kBlockEdge * kBlockEdge * kBlockEdge;

struct VoxelBlock {
  std::array<TsdfVoxel, kBlockVolume> voxels{};
};

// Lattice placement of a grid: voxel (0,0,0) has its center at `origin`,
// centers are spaced `voxel_size` apart along the world axes.
struct GridLayout {
  double voxel_size = 0.01;
  double truncation_distance = 0.04;
  Vec3 origin = Vec3::Zero();
};

// Sparse block-organized truncated signed distance grid. Value semantics:
// copyable, movable, and safe to read from many threads at once; mutation
// requires exclusive access.
class TsdfGrid {
 public:
  TsdfGrid() : TsdfGrid(GridLayout{}) {}

  explicit TsdfGrid(const GridLayout& layout, float max_weight = 100.0f)
      : layout_(layout), max_weight_(max_weight) {
    if (layout.voxel_size <= 0.0) throw GridError("voxel_size must be positive");
    if (layout.truncation_distance < 2.0 * layout.voxel_size)
      throw GridError("truncation_distance must be at least 2 * voxel_size");
  }

  const GridLayout& layout() const { return layout_; }
  double voxel_size() const { return layout_.voxel_size; }
  double truncation_distance() const { return layout_.truncation_distance; }
  const Vec3& origin() const { return layout_.origin; }
  float max_weight() const { return max_weight_; }

  std::size_t block_count() const { return blocks_.size(); }
  bool empty() const { return blocks_.empty(); }

  Vec3 voxel_center(const VoxelIndex& v) const {
    return layout_.origin + Vec3(v.x, v.y, v.z) * layout_.voxel_size;
  }

  // Voxel whose cell contains `p` (cells are centered on the lattice).
  VoxelIndex voxel_index(const Vec3& p) const {
    const Vec3 g = (p - layout_.origin) / layout_.voxel_size;
    return {static_cast<std::int32_t>(std::floor(g.x() + 0.5)),
            static_cast<std::int32_t>(std::floor(g.y() + 0.5)),
            static_cast<std::int32_t>(std::floor(g.z() + 0.5))};
  }

  static VoxelIndex block_of(const VoxelIndex& v) {
    return {v.x >> 4, v.y >> 4, v.z >> 4};
  }

  static int local_linear(const VoxelIndex& v) {
    return (v.x & 15) + kBlockEdge * ((v.y & 15) + kBlockEdge * (v.z & 15));
  }

  // Zero voxel when unallocated.
  TsdfVoxel voxel(const VoxelIndex& v) const {
    const auto it = blocks_.find(block_of(v));
    if (it == blocks_.end()) return {};
    return it->second.voxels[local_linear(v)];
  }

  const VoxelBlock* block(const VoxelIndex& block_index) const {
    const auto it = blocks_.find(block_index);
    return it == blocks_.end() ? nullptr : &it->second;
  }

  VoxelBlock& allocate_block(const VoxelIndex& block_index) { return blocks_[block_index]; }

  TsdfVoxel& mutable_voxel(const VoxelIndex& v) {
    return blocks_[block_of(v)].voxels[local_linear(v)];
  }

  // Weighted-average fusion of one observation into a voxel.
  void integrate_voxel(const VoxelIndex& v, float distance, float weight) {
    TsdfVoxel& voxel = mutable_voxel(v);
    fuse(voxel, distance, weight, max_weight_);
  }

  static void fuse(TsdfVoxel& voxel, float distance, float weight, float max_weight) {
    if (weight <= 0.0f) return;
    const double w_sum = static_cast<double>(voxel.weight) + weight;
    voxel.distance = static_cast<float>(
        (static_cast<double>(voxel.distance) * voxel.weight + static_cast<double>(distance) * weight) /
        w_sum);
    voxel.weight = static_cast<float>(std::min(w_sum, static_cast<double>(max_weight)));
  }

  // Trilinear interpolation over the 8 surrounding voxel centers. Present
  // only when every corner that contributes (coefficient > 0) is observed,
  // so queries exactly on the lattice reduce to fewer corners and identity
  // resampling is lossless. Returns (distance, weight).
  std::optional<std::pair<double, double>> trilinear_sample(const Vec3& p) const {
    const Vec3 g = (p - layout_.origin) / layout_.voxel_size;
    const Vec3 base_f(std::floor(g.x()), std::floor(g.y()), std::floor(g.z()));
    const VoxelIndex base{static_cast<std::int32_t>(base_f.x()),
                          static_cast<std::int32_t>(base_f.y()),
                          static_cast<std::int32_t>(base_f.z())};
    const Vec3 frac = g - base_f;

    double distance = 0.0;
    double weight = 0.0;
    for (int corner = 0; corner < 8; ++corner) {
      const int dx = corner & 1, dy = (corner >> 1) & 1, dz = (corner >> 2) & 1;
      const double wx = dx ? frac.x() : 1.0 - frac.x();
      const double wy = dy ? frac.y() : 1.0 - frac.y();
      const double wz = dz ? frac.z() : 1.0 - frac.z();
      const double w = wx * wy * wz;
      if (w <= 1e-12) continue;  // zero-measure corner, nothing to contribute
      const TsdfVoxel v = voxel({base.x + dx, base.y + dy, base.z + dz});
      if (v.weight <= 0.0f) return std::nullopt;
      distance += w * v.distance;
      weight += w * v.weight;
    }
    return std::make_pair(distance, weight);
  }

  std::size_t observed_voxel_count() const {
    std::size_t count = 0;
    for (const auto& [index, block] : blocks_)
      for (const TsdfVoxel& v : block.voxels)
        if (v.weight > 0.0f) ++count;
    return count;
  }

  // Tight bounds over observed voxel centers.
  Aabb observed_bounds() const {
    Aabb box;
    for_each_observed([&](const VoxelIndex& v, const TsdfVoxel&) { box.expand(voxel_center(v)); });
    return box;
  }

  std::vector<VoxelIndex> sorted_block_indices() const {
    std::vector<VoxelIndex> keys;
    keys.reserve(blocks_.size());
    for (const auto& [index, block] : blocks_) keys.push_back(index);
    std::sort(keys.begin(), keys.end());
    return keys;
  }

  // Visits observed voxels in unspecified order (fast path).
  template <typename Fn>
  void for_each_observed(Fn&& fn) const {
    for (const auto& [block_index, block] : blocks_) {
      const VoxelIndex base{block_index.x * kBlockEdge, block_index.y * kBlockEdge,
                            block_index.z * kBlockEdge};
      for (int lz = 0; lz < kBlockEdge; ++lz)
        for (int ly = 0; ly < kBlockEdge; ++ly)
          for (int lx = 0; lx < kBlockEdge; ++lx) {
            const TsdfVoxel& v = block.voxels[lx + kBlockEdge * (ly + kBlockEdge * lz)];
            if (v.weight > 0.0f) fn(VoxelIndex{base.x + lx, base.y + ly, base.z + lz}, v);
          }
    }
  }

  // Visits observed voxels in ascending (block, local) order.
  template <typename Fn>
  void for_each_observed_sorted(Fn&& fn) const {
    for (const VoxelIndex& block_index : sorted_block_indices()) {
      const VoxelBlock& block = blocks_.at(block_index);
      const VoxelIndex base{block_index.x * kBlockEdge, block_index.y * kBlockEdge,
                            block_index.z * kBlockEdge};
      for (int lz = 0; lz < kBlockEdge; ++lz)
        for (int ly = 0; ly < kBlockEdge; ++ly)
          for (int lx = 0; lx < kBlockEdge; ++lx) {
            const TsdfVoxel& v = block.voxels[lx + kBlockEdge * (ly + kBlockEdge * lz)];
            if (v.weight > 0.0f) fn(VoxelIndex{base.x + lx, base.y + ly, base.z + lz}, v);
          }
    }
  }

  const std::unordered_map<VoxelIndex, VoxelBlock, VoxelIndexHash>& blocks() const {
    return blocks_;
  }

  // Rebuilds this grid on a translated lattice (same voxel spacing, new
  // origin). Voxel contents are untouched; only the frame changes.
  TsdfGrid with_origin(const Vec3& new_origin) const {
    TsdfGrid out = *this;
    out.layout_.origin = new_origin;
    return out;
  }

 private:
  GridLayout layout_;
  float max_weight_;
  std::unordered_map<VoxelIndex, VoxelBlock, VoxelIndexHash> blocks_;
};

inline void require_same_lattice(const TsdfGrid& a, const TsdfGrid& b) {
  if (std::abs(a.voxel_size() - b.voxel_size()) > 1e-12)
    throw GridError("voxel_size mismatch between grids");
  if ((a.origin() - b.origin()).norm() > 1e-9) throw GridError("grid lattice origins differ");
}

// Resamples `grid` through the rigid transform `T` (source frame -> target
// frame) onto the lattice described by `target_layout`. Target voxels whose
// back-transformed center has all 8 source corners observed receive the
// trilinearly interpolated distance and weight; everything else stays
// unobserved.
inline TsdfGrid transform_grid(const TsdfGrid& grid, const RigidTransform& T,
                               const GridLayout& target_layout) {
  if (std::abs(grid.voxel_size() - target_layout.voxel_size) > 1e-12)
    throw GridError("transform_grid requires matching voxel_size");
  TsdfGrid out(target_layout, grid.max_weight());
  const Aabb src_bounds = grid.observed_bounds();
  if (src_bounds.empty()) return out;

  // Conservative target range: transformed corners of the source bounds.
  Aabb dst_bounds;
  for (int corner = 0; corner < 8; ++corner) {
    const Vec3 p(corner & 1 ? src_bounds.max.x() : src_bounds.min.x(),
                 corner & 2 ? src_bounds.max.y() : src_bounds.min.y(),
                 corner & 4 ? src_bounds.max.z() : src_bounds.min.z());
    dst_bounds.expand(T * p);
  }
  dst_bounds.inflate(target_layout.voxel_size);

  const VoxelIndex lo = out.voxel_index(dst_bounds.min);
  const VoxelIndex hi = out.voxel_index(dst_bounds.max);
  const RigidTransform T_inv = T.inverse();
  const Mat3 R_inv = T_inv.rotation_matrix();

  for (std::int32_t z = lo.z; z <= hi.z; ++z)
    for (std::int32_t y = lo.y; y <= hi.y; ++y)
      for (std::int32_t x = lo.x; x <= hi.x; ++x) {
        const VoxelIndex v{x, y, z};
        const Vec3 src_point = R_inv * out.voxel_center(v) + T_inv.translation;
        const auto sample = grid.trilinear_sample(src_point);
        if (!sample) continue;
        TsdfVoxel& voxel = out.mutable_voxel(v);
        voxel.distance = static_cast<float>(sample->first);
        voxel.weight = static_cast<float>(sample->second);
      }
  return out;
}

// Voxel-wise weighted average of two grids on the same lattice. Voxels
// observed in only one input are copied through; weights saturate at the
// grid's max weight.
inline TsdfGrid merge_grids(const TsdfGrid& a, const TsdfGrid& b) {
  require_same_lattice(a, b);
  TsdfGrid out = a;
  for (const auto& [block_index, block] : b.blocks()) {
    VoxelBlock& dst = out.allocate_block(block_index);
    for (int i = 0; i < kBlockVolume; ++i) {
      const TsdfVoxel& src = block.voxels[i];
      if (src.weight <= 0.0f) continue;
      TsdfGrid::fuse(dst.voxels[i], src.distance, src.weight, out.max_weight());
    }
  }
  return out;
}

struct TsdfComparison {
  double rmse = std::numeric_limits<double>::infinity();  // meters
  std::uint64_t overlap = 0;                              // voxels observed in both grids
};

// RMSE of distance over the voxels observed in both grids, plus the size of
// that overlap set. Empty overlap reports infinite error.
inline TsdfComparison tsdf_rmse_and_overlap(const TsdfGrid& a, const TsdfGrid& b) {
  require_same_lattice(a, b);
  TsdfComparison result;
  double sum_sq = 0.0;
  std::uint64_t count = 0;
  std::vector<VoxelIndex> keys = a.sorted_block_indices();
  for (const VoxelIndex& key : keys) {
    const VoxelBlock* block_b = b.block(key);
    if (!block_b) continue;
    const VoxelBlock* block_a = a.block(key);
    for (int i = 0; i < kBlockVolume; ++i) {
      const TsdfVoxel& va = block_a->voxels[i];
      const TsdfVoxel& vb = block_b->voxels[i];
      if (va.weight <= 0.0f || vb.weight <= 0.0f) continue;
      const double diff = static_cast<double>(va.distance) - vb.distance;
      sum_sq += diff * diff;
      ++count;
    }
  }
  result.overlap = count;
  if (count > 0) result.rmse = std::sqrt(sum_sq / count);
  return result;
}

}  // namespace objdb
