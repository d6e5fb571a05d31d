#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "objdb/pgm_io.hpp"  // IoError, little-endian helpers
#include "objdb/tsdf_grid.hpp"

namespace objdb {

inline constexpr char kTsdfMagic[4] = {'T', 'S', 'D', 'F'};
inline constexpr std::uint32_t kTsdfFormatVersion = 1;

// Binary grid block, little-endian throughout (usable standalone as a file
// or embedded in a larger stream):
//   "TSDF" | u32 version | f64 voxel_size | f64 truncation | f64 origin[3]
//   | u64 block_count | blocks sorted by (x, y, z):
//       i32 bx, by, bz | 4096 x (f32 distance, f32 weight)
inline void write_tsdf(const TsdfGrid& grid, std::ostream& out) {
  out.write(kTsdfMagic, 4);
  detail::write_le<std::uint32_t>(out, kTsdfFormatVersion);
  detail::write_le<double>(out, grid.voxel_size());
  detail::write_le<double>(out, grid.truncation_distance());
  for (int axis = 0; axis < 3; ++axis) detail::write_le<double>(out, grid.origin()[axis]);

  const std::vector<VoxelIndex> keys = grid.sorted_block_indices();
  detail::write_le<std::uint64_t>(out, keys.size());
  for (const VoxelIndex& key : keys) {
    detail::write_le<std::int32_t>(out, key.x);
    detail::write_le<std::int32_t>(out, key.y);
    detail::write_le<std::int32_t>(out, key.z);
    const VoxelBlock* block = grid.block(key);
    for (const TsdfVoxel& v : block->voxels) {
      detail::write_le<float>(out, v.distance);
      detail::write_le<float>(out, v.weight);
    }
  }
}

inline void write_tsdf(const TsdfGrid& grid, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  write_tsdf(grid, out);
  if (!out) throw IoError("write failed: " + path.string());
}

inline TsdfGrid read_tsdf(std::istream& in, const std::string& source = "stream") {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != std::string(kTsdfMagic, 4))
    throw IoError("not a TSDF grid: " + source);
  const auto version = detail::read_le<std::uint32_t>(in);
  if (version != kTsdfFormatVersion)
    throw IoError("unsupported grid format version " + std::to_string(version));

  GridLayout layout;
  layout.voxel_size = detail::read_le<double>(in);
  layout.truncation_distance = detail::read_le<double>(in);
  for (int axis = 0; axis < 3; ++axis) layout.origin[axis] = detail::read_le<double>(in);
  if (!in) throw IoError("truncated grid header: " + source);

  TsdfGrid grid(layout);
  const auto block_count = detail::read_le<std::uint64_t>(in);
  for (std::uint64_t b = 0; b < block_count; ++b) {
    VoxelIndex key;
    key.x = detail::read_le<std::int32_t>(in);
    key.y = detail::read_le<std::int32_t>(in);
    key.z = detail::read_le<std::int32_t>(in);
    if (!in) throw IoError("truncated grid data: " + source);
    VoxelBlock& block = grid.allocate_block(key);
    for (TsdfVoxel& v : block.voxels) {
      v.distance = detail::read_le<float>(in);
      v.weight = detail::read_le<float>(in);
    }
  }
  if (!in) throw IoError("truncated grid data: " + source);
  return grid;
}

inline TsdfGrid read_tsdf(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  return read_tsdf(in, path.string());
}

}  // namespace objdb
