#pragma once

// Per-frame geometric segmentation of a depth image: optional hole filling,
// depth-discontinuity edges, kernel-smoothed surface normals, a local
// convexity test, and 4-connected region labeling of the combined edge map.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "objdb/geometry.hpp"
#include "objdb/image.hpp"

namespace objdb {

struct SegmenterConfig {
  bool enable_inpainting = true;
  int fill_window = 5;        // square window diameter for hole filling
  int fill_min_valid = 3;     // minimum valid neighbors to fill a hole
  int fill_passes = 2;        // hole-filling iterations
  double discontinuity_factor = 0.02;            // edge when step > factor * depth
  int normal_kernel_radius = 4;                  // tangent cross products averaged over (2k+1)^2
  double concavity_threshold = std::cos(deg_to_rad(86.0));  // dot(n, dir) above this = concave
  // The fold test runs on its own lightly smoothed normal map: with the wide
  // kernel above, pixels on opposite sides of a crease share nearly the same
  // blended normal and no pairwise test can see the fold.
  int convexity_kernel_radius = 1;
  // Pair partners are probed in 8 directions at pixel radii 1..probe_radius.
  // Points within one pixel of a crease lie close to both surfaces, so
  // immediate neighbors alone cannot witness a shallow fold; radius 2 pairs
  // straddle the crease with measurable height on both sides.
  int convexity_probe_radius = 2;
  int min_region_px = 200;    // smaller 4-connected components are dropped
};

// One segmented frame: per-pixel labels (0 = edge/unlabeled/invalid) plus the
// per-label camera-frame point sets. Points carry normals where the normal
// map had one (zero vector otherwise).
struct LabeledDepthFrame {
  DepthImage depth;             // after optional inpainting
  Image<std::uint32_t> labels;  // 1-based, frame-local
  RigidTransform world_from_camera;
  std::map<std::uint32_t, PointCloud> segments;  // camera-frame points per label
};

// Fills invalid pixels that have at least `fill_min_valid` valid neighbors in
// a `fill_window` x `fill_window` window with the neighborhood median (upper
// median for even counts), repeated `fill_passes` times. Valid pixels are
// never modified.
inline DepthImage inpaint_depth(const DepthImage& img, const SegmenterConfig& cfg = {}) {
  DepthImage out = img;
  const int radius = std::max(0, (cfg.fill_window - 1) / 2);
  std::vector<float> neighborhood;
  for (int pass = 0; pass < cfg.fill_passes; ++pass) {
    const Image<float> src = out.depth;
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x) {
        if (out.valid_at(x, y)) continue;
        neighborhood.clear();
        for (int dy = -radius; dy <= radius; ++dy)
          for (int dx = -radius; dx <= radius; ++dx) {
            const int nx = x + dx, ny = y + dy;
            if (!src.in_bounds(nx, ny)) continue;
            const float d = src.at(nx, ny);
            if (std::isfinite(d) && d > 0.0f) neighborhood.push_back(d);
          }
        if (static_cast<int>(neighborhood.size()) < cfg.fill_min_valid) continue;
        const std::size_t mid = neighborhood.size() / 2;
        std::nth_element(neighborhood.begin(), neighborhood.begin() + mid, neighborhood.end());
        out.depth.at(x, y) = neighborhood[mid];
      }
  }
  return out;
}

// Edge where the largest absolute depth step to a 3x3 neighbor exceeds
// `discontinuity_factor` times the pixel's own depth. Invalid pixels are
// edges by definition.
inline Image<std::uint8_t> depth_discontinuity_map(const DepthImage& img,
                                                   const SegmenterConfig& cfg = {}) {
  Image<std::uint8_t> edges(img.width(), img.height(), 0);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      if (!img.valid_at(x, y)) {
        edges.at(x, y) = 1;
        continue;
      }
      const double d = img.depth.at(x, y);
      const double threshold = cfg.discontinuity_factor * d;
      for (int dy = -1; dy <= 1 && !edges.at(x, y); ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const int nx = x + dx, ny = y + dy;
          if (!img.depth.in_bounds(nx, ny) || !img.valid_at(nx, ny)) continue;
          if (std::abs(img.depth.at(nx, ny) - d) > threshold) {
            edges.at(x, y) = 1;
            break;
          }
        }
    }
  return edges;
}

// Per-pixel unit normals oriented toward the camera. The normal is the
// normalized sum of central-difference tangent cross products over a
// (2k+1)^2 kernel; it is absent (nullopt) when the neighborhood contains
// invalid or out-of-bounds depth. When a discontinuity mask is supplied,
// kernel samples that touch a masked pixel are skipped instead of averaged,
// so normals near an occlusion boundary only mix samples from one surface
// (without the mask such pixels blend both sides and the downstream
// convexity test sprays false concave marks along every silhouette).
inline Image<std::optional<Vec3>> normal_map(const DepthImage& img,
                                             const SegmenterConfig& cfg = {},
                                             const Image<std::uint8_t>* discontinuity_mask =
                                                 nullptr) {
  const int w = img.width(), h = img.height();
  Image<std::optional<Vec3>> normals(w, h, std::nullopt);
  // Precompute camera-frame points for valid pixels.
  Image<Vec3> points(w, h, Vec3::Zero());
  Image<std::uint8_t> valid(w, h, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (img.valid_at(x, y)) {
        points.at(x, y) = img.backproject(x, y);
        valid.at(x, y) = 1;
      }
  const auto masked = [&](int x, int y) {
    return discontinuity_mask != nullptr && discontinuity_mask->at(x, y) != 0 &&
           valid.at(x, y);  // invalid pixels are handled by the strict rule below
  };
  const int k = cfg.normal_kernel_radius;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!valid.at(x, y)) continue;
      Vec3 sum = Vec3::Zero();
      bool complete = true;
      int used = 0;
      for (int dy = -k; dy <= k && complete; ++dy)
        for (int dx = -k; dx <= k; ++dx) {
          const int cx = x + dx, cy = y + dy;
          if (cx - 1 < 0 || cx + 1 >= w || cy - 1 < 0 || cy + 1 >= h || !valid.at(cx - 1, cy) ||
              !valid.at(cx + 1, cy) || !valid.at(cx, cy - 1) || !valid.at(cx, cy + 1)) {
            complete = false;
            break;
          }
          if (masked(cx, cy) || masked(cx - 1, cy) || masked(cx + 1, cy) || masked(cx, cy - 1) ||
              masked(cx, cy + 1))
            continue;
          const Vec3 tx = points.at(cx + 1, cy) - points.at(cx - 1, cy);
          const Vec3 ty = points.at(cx, cy + 1) - points.at(cx, cy - 1);
          sum += tx.cross(ty);
          ++used;
        }
      if (!complete || used == 0) continue;
      const double n = sum.norm();
      if (n < 1e-12) continue;
      Vec3 normal = sum / n;
      if (normal.dot(points.at(x, y)) > 0.0) normal = -normal;  // face the camera
      normals.at(x, y) = normal;
    }
  return normals;
}

// Marks pixels lying in a concave fold. A neighbor pair (p, q) witnesses a
// fold when each point sits above the other's tangent plane by more than the
// concavity margin: dot(n_p, dir_pq) and dot(n_q, -dir_pq) both exceed the
// threshold. A genuinely concave crease satisfies this from both surfaces;
// a convex ridge never does (the far side falls *below* the near tangent
// plane, so a one-sided test would false-positive on every smoothed ridge).
// The supplied normals must be at most lightly smoothed: a wide averaging
// kernel gives pixels on opposite sides of a crease nearly identical blended
// normals, hiding the fold from any pairwise test. Pixels without a normal
// are never marked here (validity is handled by the discontinuity map).
inline Image<std::uint8_t> convexity_map(const DepthImage& img,
                                         const Image<std::optional<Vec3>>& normals,
                                         const SegmenterConfig& cfg = {}) {
  Image<std::uint8_t> concave(img.width(), img.height(), 0);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const auto& n = normals.at(x, y);
      if (!n || !img.valid_at(x, y)) continue;
      const Vec3 p = img.backproject(x, y);
      constexpr int dx8[] = {1, 1, 0, -1, -1, -1, 0, 1};
      constexpr int dy8[] = {0, 1, 1, 1, 0, -1, -1, -1};
      for (int d = 0; d < 8 && !concave.at(x, y); ++d)
        for (int r = 1; r <= cfg.convexity_probe_radius; ++r) {
          const int nx = x + r * dx8[d], ny = y + r * dy8[d];
          if (!img.depth.in_bounds(nx, ny) || !img.valid_at(nx, ny)) continue;
          const auto& nq = normals.at(nx, ny);
          if (!nq) continue;
          const Vec3 q = img.backproject(nx, ny);
          const Vec3 delta = q - p;
          const double dist = delta.norm();
          if (dist < 1e-9) continue;
          const Vec3 dir = delta / dist;
          if (n->dot(dir) > cfg.concavity_threshold &&
              nq->dot(-dir) > cfg.concavity_threshold) {
            concave.at(x, y) = 1;
            break;
          }
        }
    }
  return concave;
}

// Full segmentation: combined edge map (discontinuity OR concave fold), then
// 4-connected components of the remaining valid pixels. Components smaller
// than `min_region_px` are dropped. Labels are assigned in raster-scan order
// of each region's first pixel, starting at 1; they are frame-local.
inline LabeledDepthFrame segment_frame(const DepthImage& img, const RigidTransform& pose,
                                       const SegmenterConfig& cfg = {}) {
  LabeledDepthFrame frame;
  frame.world_from_camera = pose;
  frame.depth = cfg.enable_inpainting ? inpaint_depth(img, cfg) : img;
  const int w = frame.depth.width(), h = frame.depth.height();
  frame.labels = Image<std::uint32_t>(w, h, 0u);
  if (w == 0 || h == 0) return frame;

  const Image<std::uint8_t> disc = depth_discontinuity_map(frame.depth, cfg);
  const Image<std::optional<Vec3>> normals = normal_map(frame.depth, cfg, &disc);
  SegmenterConfig fold_cfg = cfg;
  fold_cfg.normal_kernel_radius = cfg.convexity_kernel_radius;
  const Image<std::optional<Vec3>> fold_normals = normal_map(frame.depth, fold_cfg, &disc);
  const Image<std::uint8_t> concave = convexity_map(frame.depth, fold_normals, cfg);

  Image<std::uint8_t> blocked(w, h, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      blocked.at(x, y) = (disc.at(x, y) || concave.at(x, y)) ? 1 : 0;

  std::uint32_t next_label = 1;
  std::vector<std::pair<int, int>> stack;
  std::vector<std::pair<int, int>> region;
  for (int y0 = 0; y0 < h; ++y0)
    for (int x0 = 0; x0 < w; ++x0) {
      if (blocked.at(x0, y0) || frame.labels.at(x0, y0) != 0) continue;
      region.clear();
      stack.assign(1, {x0, y0});
      blocked.at(x0, y0) = 1;  // reuse as visited marker
      while (!stack.empty()) {
        const auto [x, y] = stack.back();
        stack.pop_back();
        region.emplace_back(x, y);
        constexpr int dx4[] = {1, -1, 0, 0};
        constexpr int dy4[] = {0, 0, 1, -1};
        for (int i = 0; i < 4; ++i) {
          const int nx = x + dx4[i], ny = y + dy4[i];
          if (!blocked.in_bounds(nx, ny) || blocked.at(nx, ny)) continue;
          blocked.at(nx, ny) = 1;
          stack.emplace_back(nx, ny);
        }
      }
      if (static_cast<int>(region.size()) < cfg.min_region_px) continue;
      const std::uint32_t label = next_label++;
      PointCloud& cloud = frame.segments[label];
      cloud.points.reserve(region.size());
      cloud.normals.reserve(region.size());
      for (const auto& [x, y] : region) {
        frame.labels.at(x, y) = label;
        cloud.points.push_back(frame.depth.backproject(x, y));
        const auto& n = normals.at(x, y);
        cloud.normals.push_back(n ? *n : Vec3::Zero());
      }
    }
  return frame;
}

}  // namespace objdb
