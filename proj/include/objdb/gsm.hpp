#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "objdb/depth_segmenter.hpp"
#include "objdb/marching_cubes.hpp"
#include "objdb/ply_io.hpp"
#include "objdb/tsdf_io.hpp"

namespace objdb {

struct GsmConfig {
  GridLayout layout;               // scene lattice; truncation band of the fused map
  float max_weight = 100.0f;
  double t_overlap = 0.3;          // fraction of a frame segment's points that must land
                                   // in voxels of one persistent label to reuse it
  int t_inactive = 30;             // frames without updates before a label is extractable
  int min_segment_voxels = 100;    // smaller segments are never extracted
  double max_range = 6.0;          // depth measurements beyond this are ignored
};

// Per-voxel record of every label ever fused into the voxel with its
// observation count. Stored as a vector sorted by label id: most voxels see
// one or two labels, and ordered storage makes serialization and the
// smallest-id tie-break deterministic.
struct LabelHistogram {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> counts;  // (label, count), label-ascending

  void add(std::uint32_t label, std::uint32_t n = 1) {
    auto it = std::lower_bound(counts.begin(), counts.end(), label,
                               [](const auto& e, std::uint32_t l) { return e.first < l; });
    if (it != counts.end() && it->first == label) {
      it->second += n;
    } else {
      counts.insert(it, {label, n});
    }
  }

  // Label with the highest count; ties go to the smallest label id. 0 = empty.
  std::uint32_t main_label() const {
    std::uint32_t best = 0, best_count = 0;
    for (const auto& [label, count] : counts)
      if (count > best_count) {
        best = label;
        best_count = count;
      }
    return best;
  }

  std::uint64_t total() const {
    std::uint64_t sum = 0;
    for (const auto& [label, count] : counts) sum += count;
    return sum;
  }

  std::uint32_t count_of(std::uint32_t label) const {
    for (const auto& [l, c] : counts)
      if (l == label) return c;
    return 0;
  }

  bool empty() const { return counts.empty(); }
};

struct LabelInfo {
  int last_updated_frame = -1;
  bool extracted = false;
  std::uint64_t global_count = 0;  // sum of this label's counts over all voxels
};

// A segment lifted out of the scene map: the subgrid of voxels whose main
// label matches, expressed in a local frame centered on the segment.
struct RawSegment {
  std::uint32_t label = 0;
  TsdfGrid tsdf;
  RigidTransform pose;  // world_from_segment: lattice-aligned centroid translation
  int source_session = 0;
};

struct MergeEvent {
  std::vector<std::uint32_t> merged;  // all participating persistent labels
  std::uint32_t survivor = 0;
};

struct LabelResolution {
  int frame_index = -1;
  std::map<std::uint32_t, std::uint32_t> frame_to_persistent;
  std::vector<MergeEvent> merges;
};

class GlobalSegmentationMap;
GlobalSegmentationMap read_gsm(const std::filesystem::path& path);

// Scene-level fused map: a TSDF grid plus a per-voxel label histogram volume
// and per-label bookkeeping. Labels are persistent across frames; frame
// segments are matched to them by voxel overlap, merged when co-identified,
// and extracted as RawSegments once inactive.
class GlobalSegmentationMap {
 public:
  explicit GlobalSegmentationMap(const GsmConfig& config = {}, int session_id = 0)
      : config_(config), session_id_(session_id), tsdf_(config.layout, config.max_weight) {}

  const GsmConfig& config() const { return config_; }
  int session_id() const { return session_id_; }
  const TsdfGrid& tsdf() const { return tsdf_; }
  int frame_count() const { return frame_counter_; }
  std::uint32_t next_label() const { return next_label_; }
  const std::map<std::uint32_t, LabelInfo>& label_infos() const { return infos_; }

  const std::unordered_map<VoxelIndex, LabelHistogram, VoxelIndexHash>& label_volume() const {
    return labels_;
  }

  const LabelHistogram* histogram(const VoxelIndex& v) const {
    const auto it = labels_.find(v);
    return it == labels_.end() ? nullptr : &it->second;
  }

  std::uint32_t main_label_at(const VoxelIndex& v) const {
    const LabelHistogram* h = histogram(v);
    return h ? h->main_label() : 0;
  }

  // Voxel count per persistent label, counting voxels by their main label.
  std::map<std::uint32_t, std::uint64_t> label_voxel_counts() const {
    std::map<std::uint32_t, std::uint64_t> out;
    for (const auto& [v, hist] : labels_) {
      const std::uint32_t m = hist.main_label();
      if (m != 0) ++out[m];
    }
    return out;
  }

  // Matches each frame segment against the existing persistent labels by the
  // fraction of its points landing in voxels of one main label. Reuses the
  // best label at or above t_overlap, allocates a fresh label otherwise, and
  // merges persistent labels when one frame segment overlaps several of them:
  // per-voxel counts are summed, so the merge loses no observation history.
  // The surviving label is the one with the larger global count.
  LabelResolution resolve_frame_labels(const LabeledDepthFrame& frame) {
    LabelResolution res;
    res.frame_index = frame_counter_;
    for (const auto& [frame_label, cloud] : frame.segments) {
      if (frame_label == 0 || cloud.points.empty()) continue;
      std::map<std::uint32_t, std::uint64_t> hits;
      for (const Vec3& p_cam : cloud.points) {
        const Vec3 p = frame.world_from_camera * p_cam;
        const std::uint32_t m = main_label_at(tsdf_.voxel_index(p));
        if (m != 0) ++hits[m];
      }
      const double total = static_cast<double>(cloud.points.size());
      std::vector<std::uint32_t> qualifying;
      std::uint32_t best = 0;
      double best_fraction = 0.0;
      for (const auto& [label, n] : hits) {
        const double fraction = n / total;
        if (fraction < config_.t_overlap) continue;
        qualifying.push_back(label);
        if (fraction > best_fraction) {
          best_fraction = fraction;
          best = label;
        }
      }
      if (qualifying.empty()) {
        res.frame_to_persistent[frame_label] = next_label_++;
        continue;
      }
      if (qualifying.size() >= 2) {
        const std::uint32_t survivor = merge_labels(qualifying);
        res.merges.push_back({qualifying, survivor});
        best = survivor;
      }
      res.frame_to_persistent[frame_label] = best;
    }
    return res;
  }

  // Fuses one labeled frame: labels are resolved first, then every valid
  // depth pixel updates the TSDF along its camera ray inside the truncation
  // band around the measured point (projective distance, weight 1), and the
  // resolved label's histogram count is incremented on voxels within the
  // truncation distance of the measured point. Unlabeled pixels still fuse
  // depth; they just leave the label volume alone.
  LabelResolution integrate_frame(const LabeledDepthFrame& frame) {
    const int this_frame = frame_counter_++;
    LabelResolution res = resolve_frame_labels(frame);

    const RigidTransform& pose = frame.world_from_camera;
    const Vec3 cam_origin = pose.translation;
    const RigidTransform world_to_cam = pose.inverse();
    const Mat3 R_wc = world_to_cam.rotation_matrix();
    const double trunc = tsdf_.truncation_distance();
    const double step = tsdf_.voxel_size() * 0.5;
    const float ftrunc = static_cast<float>(trunc);

    std::map<std::uint32_t, std::uint64_t> label_increments;
    for (int y = 0; y < frame.depth.height(); ++y) {
      for (int x = 0; x < frame.depth.width(); ++x) {
        if (!frame.depth.valid_at(x, y)) continue;
        const double d = frame.depth.depth.at(x, y);
        if (d <= 0.0 || d > config_.max_range) continue;
        const Vec3 p_world = pose * frame.depth.backproject(x, y);
        const Vec3 to_point = p_world - cam_origin;
        const double dist = to_point.norm();
        if (dist < 1e-9) continue;
        const Vec3 dir = to_point / dist;

        std::uint32_t persistent = 0;
        const std::uint32_t frame_label = frame.labels.at(x, y);
        if (frame_label != 0) {
          const auto it = res.frame_to_persistent.find(frame_label);
          if (it != res.frame_to_persistent.end()) persistent = it->second;
        }

        VoxelIndex last{INT32_MIN, INT32_MIN, INT32_MIN};
        const double t_begin = std::max(step, dist - trunc);
        const double t_end = dist + trunc;
        for (double t = t_begin; t <= t_end; t += step) {
          const VoxelIndex v = tsdf_.voxel_index(cam_origin + dir * t);
          if (v == last) continue;
          last = v;
          const Vec3 center = tsdf_.voxel_center(v);
          // Projective signed distance: measured depth minus the voxel
          // center's depth along the camera's viewing axis.
          const double voxel_depth = (R_wc * center + world_to_cam.translation).z();
          const float sdf =
              std::clamp(static_cast<float>(d - voxel_depth), -ftrunc, ftrunc);
          tsdf_.integrate_voxel(v, sdf, 1.0f);
          if (persistent != 0 && (center - p_world).norm() <= trunc) {
            labels_[v].add(persistent);
            ++label_increments[persistent];
          }
        }
      }
    }

    std::set<std::uint32_t> persistents;
    for (const auto& [frame_label, persistent] : res.frame_to_persistent)
      persistents.insert(persistent);
    for (const std::uint32_t persistent : persistents) {
      LabelInfo& info = infos_[persistent];
      info.last_updated_frame = this_frame;
      info.extracted = false;  // a re-observed label becomes active again
      const auto it = label_increments.find(persistent);
      if (it != label_increments.end()) info.global_count += it->second;
    }
    return res;
  }

  // Emits every non-extracted label that has been quiet for t_inactive frames
  // and owns at least min_segment_voxels voxels (by main label). The scene
  // map itself is never modified; emitted labels are only flagged so they are
  // not re-emitted until they become active again.
  std::vector<RawSegment> extract_inactive_segments(int current_frame) {
    std::vector<std::uint32_t> due;
    for (const auto& [label, info] : infos_)
      if (!info.extracted && current_frame - info.last_updated_frame >= config_.t_inactive)
        due.push_back(label);
    std::vector<RawSegment> out;
    if (due.empty()) return out;

    std::map<std::uint32_t, std::vector<VoxelIndex>> voxels_by_label;
    for (const auto& [v, hist] : labels_) {
      const std::uint32_t m = hist.main_label();
      if (m != 0 && std::binary_search(due.begin(), due.end(), m)) voxels_by_label[m].push_back(v);
    }

    for (const std::uint32_t label : due) {
      auto it = voxels_by_label.find(label);
      if (it == voxels_by_label.end() ||
          static_cast<int>(it->second.size()) < config_.min_segment_voxels)
        continue;
      std::vector<VoxelIndex>& voxels = it->second;
      std::sort(voxels.begin(), voxels.end());

      Vec3 index_sum = Vec3::Zero();
      for (const VoxelIndex& v : voxels) index_sum += Vec3(v.x, v.y, v.z);
      const Vec3 mean = index_sum / static_cast<double>(voxels.size());
      // Snap the centroid to the lattice so the copy is voxel-exact.
      const VoxelIndex shift{static_cast<std::int32_t>(std::llround(mean.x())),
                             static_cast<std::int32_t>(std::llround(mean.y())),
                             static_cast<std::int32_t>(std::llround(mean.z()))};

      RawSegment segment;
      segment.label = label;
      segment.source_session = session_id_;
      GridLayout local = config_.layout;
      local.origin = Vec3::Zero();
      segment.tsdf = TsdfGrid(local, config_.max_weight);
      segment.pose = RigidTransform::from_translation(
          config_.layout.origin +
          Vec3(shift.x, shift.y, shift.z) * config_.layout.voxel_size);
      for (const VoxelIndex& v : voxels) {
        const TsdfVoxel voxel = tsdf_.voxel(v);
        if (voxel.weight <= 0.0f) continue;
        segment.tsdf.mutable_voxel({v.x - shift.x, v.y - shift.y, v.z - shift.z}) = voxel;
      }
      if (segment.tsdf.empty()) continue;
      infos_[label].extracted = true;
      out.push_back(std::move(segment));
    }
    return out;
  }

 private:
  // Sums per-voxel counts of all participating labels into the survivor (the
  // label with the largest global count; ties to the smallest id) and drops
  // the absorbed labels everywhere.
  std::uint32_t merge_labels(const std::vector<std::uint32_t>& participants) {
    std::uint32_t survivor = participants.front();
    for (const std::uint32_t label : participants)
      if (infos_[label].global_count > infos_[survivor].global_count) survivor = label;

    for (auto& [v, hist] : labels_) {
      std::uint32_t absorbed_count = 0;
      auto& entries = hist.counts;
      for (auto it = entries.begin(); it != entries.end();) {
        if (it->first != survivor &&
            std::find(participants.begin(), participants.end(), it->first) !=
                participants.end()) {
          absorbed_count += it->second;
          it = entries.erase(it);
        } else {
          ++it;
        }
      }
      if (absorbed_count > 0) hist.add(survivor, absorbed_count);
    }

    LabelInfo& keep = infos_[survivor];
    for (const std::uint32_t label : participants) {
      if (label == survivor) continue;
      const LabelInfo& gone = infos_[label];
      keep.global_count += gone.global_count;
      keep.last_updated_frame = std::max(keep.last_updated_frame, gone.last_updated_frame);
      infos_.erase(label);
    }
    keep.extracted = false;
    return survivor;
  }

  friend GlobalSegmentationMap read_gsm(const std::filesystem::path& path);

  GsmConfig config_;
  int session_id_ = 0;
  TsdfGrid tsdf_;
  std::unordered_map<VoxelIndex, LabelHistogram, VoxelIndexHash> labels_;
  std::map<std::uint32_t, LabelInfo> infos_;
  int frame_counter_ = 0;
  std::uint32_t next_label_ = 1;
};

// Builds a segmenter-shaped frame from externally supplied label images
// (ground-truth renders, pre-segmented data). Pixels keep their given labels;
// per-label clouds carry camera-frame points with zero normals.
inline LabeledDepthFrame labeled_frame_from_images(const DepthImage& depth,
                                                   const Image<std::uint32_t>& labels,
                                                   const RigidTransform& world_from_camera) {
  if (labels.width() != depth.width() || labels.height() != depth.height())
    throw GridError("label image size does not match depth image");
  LabeledDepthFrame frame;
  frame.depth = depth;
  frame.labels = labels;
  frame.world_from_camera = world_from_camera;
  for (int y = 0; y < depth.height(); ++y)
    for (int x = 0; x < depth.width(); ++x) {
      const std::uint32_t l = labels.at(x, y);
      if (l == 0 || !depth.valid_at(x, y)) continue;
      PointCloud& cloud = frame.segments[l];
      cloud.points.push_back(depth.backproject(x, y));
      cloud.normals.push_back(Vec3::Zero());
    }
  return frame;
}

// Scene surface mesh with per-vertex label colors (labelless areas in gray).
inline PlyData labeled_surface_ply(const GlobalSegmentationMap& map) {
  const SurfaceMesh mesh = extract_surface(map.tsdf());
  PlyData ply;
  ply.vertices = mesh.cloud.points;
  ply.normals = mesh.cloud.normals;
  ply.faces = mesh.triangles;
  ply.colors.reserve(ply.vertices.size());
  for (const Vec3& p : ply.vertices) {
    const VoxelIndex v = map.tsdf().voxel_index(p);
    std::uint32_t label = map.main_label_at(v);
    if (label == 0) {
      // Vertices sit on voxel boundaries; scan the 3x3x3 neighborhood for the
      // nearest labeled voxel center before giving up.
      double best = std::numeric_limits<double>::infinity();
      for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const VoxelIndex n{v.x + dx, v.y + dy, v.z + dz};
            const std::uint32_t m = map.main_label_at(n);
            if (m == 0) continue;
            const double dist = (map.tsdf().voxel_center(n) - p).squaredNorm();
            if (dist < best) {
              best = dist;
              label = m;
            }
          }
    }
    ply.colors.push_back(label == 0 ? Rgb8{128, 128, 128} : label_color(label));
  }
  return ply;
}

inline constexpr char kGsmMagic[4] = {'G', 'S', 'M', 'C'};
inline constexpr std::uint32_t kGsmFormatVersion = 1;

// Checkpoint layout, little-endian:
//   "GSMC" | u32 version | i32 session | i64 frame_counter | u32 next_label
//   | f64 t_overlap | i32 t_inactive | i32 min_segment_voxels | f64 max_range
//   | u32 label_info_count | per label: u32 id, i64 last_updated, u8 extracted,
//     u64 global_count
//   | embedded TSDF grid (see tsdf_io)
//   | label volume: for each grid block in (x,y,z) order, for each of the
//     4096 voxels in linear order: u16 entry count, then (u32 label,
//     u32 count) pairs.
inline void write_gsm(const GlobalSegmentationMap& map, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(kGsmMagic, 4);
  detail::write_le<std::uint32_t>(out, kGsmFormatVersion);
  detail::write_le<std::int32_t>(out, map.session_id());
  detail::write_le<std::int64_t>(out, map.frame_count());

  detail::write_le<std::uint32_t>(out, map.next_label());
  detail::write_le<double>(out, map.config().t_overlap);
  detail::write_le<std::int32_t>(out, map.config().t_inactive);
  detail::write_le<std::int32_t>(out, map.config().min_segment_voxels);
  detail::write_le<double>(out, map.config().max_range);

  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(map.label_infos().size()));
  for (const auto& [label, info] : map.label_infos()) {
    detail::write_le<std::uint32_t>(out, label);
    detail::write_le<std::int64_t>(out, info.last_updated_frame);
    detail::write_le<std::uint8_t>(out, info.extracted ? 1 : 0);
    detail::write_le<std::uint64_t>(out, info.global_count);
  }

  write_tsdf(map.tsdf(), out);

  static const LabelHistogram kEmpty{};
  for (const VoxelIndex& block_index : map.tsdf().sorted_block_indices()) {
    const VoxelIndex base{block_index.x * kBlockEdge, block_index.y * kBlockEdge,
                          block_index.z * kBlockEdge};
    for (int lz = 0; lz < kBlockEdge; ++lz)
      for (int ly = 0; ly < kBlockEdge; ++ly)
        for (int lx = 0; lx < kBlockEdge; ++lx) {
          const VoxelIndex v{base.x + lx, base.y + ly, base.z + lz};
          const LabelHistogram* hist = map.histogram(v);
          if (!hist) hist = &kEmpty;
          detail::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(hist->counts.size()));
          for (const auto& [label, count] : hist->counts) {
            detail::write_le<std::uint32_t>(out, label);
            detail::write_le<std::uint32_t>(out, count);
          }
        }
  }
  if (!out) throw IoError("write failed: " + path.string());
}

inline GlobalSegmentationMap read_gsm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != std::string(kGsmMagic, 4))
    throw IoError("not a segmentation map checkpoint: " + path.string());
  const auto version = detail::read_le<std::uint32_t>(in);
  if (version != kGsmFormatVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));

  const auto session = detail::read_le<std::int32_t>(in);
  const auto frame_counter = detail::read_le<std::int64_t>(in);
  const auto next_label = detail::read_le<std::uint32_t>(in);
  GsmConfig config;
  config.t_overlap = detail::read_le<double>(in);
  config.t_inactive = detail::read_le<std::int32_t>(in);
  config.min_segment_voxels = detail::read_le<std::int32_t>(in);
  config.max_range = detail::read_le<double>(in);

  std::map<std::uint32_t, LabelInfo> infos;
  const auto info_count = detail::read_le<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < info_count; ++i) {
    const auto label = detail::read_le<std::uint32_t>(in);
    LabelInfo info;
    info.last_updated_frame = static_cast<int>(detail::read_le<std::int64_t>(in));
    info.extracted = detail::read_le<std::uint8_t>(in) != 0;
    info.global_count = detail::read_le<std::uint64_t>(in);
    infos[label] = info;
  }
  if (!in) throw IoError("truncated checkpoint header: " + path.string());

  TsdfGrid grid = read_tsdf(in, path.string());
  config.layout = grid.layout();
  config.max_weight = grid.max_weight();

  GlobalSegmentationMap map(config, session);
  map.tsdf_ = std::move(grid);
  map.infos_ = std::move(infos);
  map.frame_counter_ = static_cast<int>(frame_counter);
  map.next_label_ = next_label;

  for (const VoxelIndex& block_index : map.tsdf_.sorted_block_indices()) {
    const VoxelIndex base{block_index.x * kBlockEdge, block_index.y * kBlockEdge,
                          block_index.z * kBlockEdge};
    for (int lz = 0; lz < kBlockEdge; ++lz)
      for (int ly = 0; ly < kBlockEdge; ++ly)
        for (int lx = 0; lx < kBlockEdge; ++lx) {
          const auto n = detail::read_le<std::uint16_t>(in);
          if (n == 0) continue;
          LabelHistogram hist;
          hist.counts.reserve(n);
          for (int k = 0; k < n; ++k) {
            const auto label = detail::read_le<std::uint32_t>(in);
            const auto count = detail::read_le<std::uint32_t>(in);
            hist.counts.emplace_back(label, count);
          }
          map.labels_[{base.x + lx, base.y + ly, base.z + lz}] = std::move(hist);
        }
  }
  if (!in) throw IoError("truncated checkpoint label volume: " + path.string());
  return map;
}

}  // namespace objdb
