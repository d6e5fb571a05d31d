#pragma once

// Visualization helpers: turn segmentation intermediates into 8-bit images.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include "objdb/depth_segmenter.hpp"
#include "objdb/image.hpp"
#include "objdb/pgm_io.hpp"

namespace objdb {

inline Image<std::uint8_t> depth_to_gray(const Image<float>& depth) {
  float max_d = 0.0f;
  for (const float d : depth.data())
    if (std::isfinite(d)) max_d = std::max(max_d, d);
  Image<std::uint8_t> out(depth.width(), depth.height(), 0);
  if (max_d <= 0.0f) return out;
  for (int y = 0; y < depth.height(); ++y)
    for (int x = 0; x < depth.width(); ++x) {
      const float d = depth.at(x, y);
      if (!std::isfinite(d) || d <= 0.0f) continue;
      out.at(x, y) = static_cast<std::uint8_t>(std::clamp(255.0f * d / max_d, 1.0f, 255.0f));
    }
  return out;
}

inline Image<std::uint8_t> mask_to_gray(const Image<std::uint8_t>& mask) {
  Image<std::uint8_t> out(mask.width(), mask.height(), 0);
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) out.at(x, y) = mask.at(x, y) ? 255 : 0;
  return out;
}

inline Image<Rgb8> normals_to_rgb(const Image<std::optional<Vec3>>& normals) {
  Image<Rgb8> out(normals.width(), normals.height(), Rgb8{0, 0, 0});
  for (int y = 0; y < normals.height(); ++y)
    for (int x = 0; x < normals.width(); ++x) {
      const auto& n = normals.at(x, y);
      if (!n) continue;
      auto enc = [](double v) {
        return static_cast<std::uint8_t>(std::clamp(127.5 * (v + 1.0), 0.0, 255.0));
      };
      out.at(x, y) = Rgb8{enc(n->x()), enc(n->y()), enc(n->z())};
    }
  return out;
}

inline Image<Rgb8> labels_to_rgb(const Image<std::uint32_t>& labels) {
  Image<Rgb8> out(labels.width(), labels.height(), Rgb8{0, 0, 0});
  for (int y = 0; y < labels.height(); ++y)
    for (int x = 0; x < labels.width(); ++x) out.at(x, y) = label_color(labels.at(x, y));
  return out;
}

// Writes the six per-stage panels for one segmented frame:
// raw depth, inpainted depth, discontinuity edges, normals, concave folds,
// final labels. Returns the number of files written.
inline int write_segmenter_debug(const DepthImage& raw, const LabeledDepthFrame& frame,
                                 const SegmenterConfig& cfg, const std::string& dir,
                                 const std::string& prefix) {
  const Image<std::uint8_t> disc = depth_discontinuity_map(frame.depth, cfg);
  const auto normals = normal_map(frame.depth, cfg, &disc);
  SegmenterConfig fold_cfg = cfg;
  fold_cfg.normal_kernel_radius = cfg.convexity_kernel_radius;
  const auto fold_normals = normal_map(frame.depth, fold_cfg, &disc);
  const Image<std::uint8_t> concave = convexity_map(frame.depth, fold_normals, cfg);
  write_pgm8(depth_to_gray(raw.depth), dir + "/" + prefix + "_1_depth.pgm");
  write_pgm8(depth_to_gray(frame.depth.depth), dir + "/" + prefix + "_2_inpainted.pgm");
  write_pgm8(mask_to_gray(disc), dir + "/" + prefix + "_3_edges.pgm");
  write_ppm8(normals_to_rgb(normals), dir + "/" + prefix + "_4_normals.ppm");
  write_pgm8(mask_to_gray(concave), dir + "/" + prefix + "_5_concave.pgm");
  write_ppm8(labels_to_rgb(frame.labels), dir + "/" + prefix + "_6_labels.ppm");
  return 6;
}

}  // namespace objdb
