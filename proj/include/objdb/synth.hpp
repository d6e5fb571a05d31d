#pragma once

// Synthetic ground-truth worlds: analytic solid primitives, a ray-cast depth
// renderer with a physically motivated noise model, canned benchmark scenes,
// and exact surface/occupancy oracles for tests.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "objdb/geometry.hpp"
#include "objdb/image.hpp"
#include "objdb/kdtree.hpp"
#include "objdb/pgm_io.hpp"
#include "objdb/tsdf_grid.hpp"
#include "objdb/trajectory_io.hpp"

namespace objdb::synth {

class SceneError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Solid shapes.
//
// Every shape provides three consistent views of the same surface:
//   * signed_distance(p): negative inside, zero on the surface;
//   * raycast(o, d): smallest t > 0 with o + t*d on the surface;
//   * sample_surface(spacing): a deterministic quasi-uniform point sampling.
// Plane-set solids use max over half-space distances, which has the exact
// sign everywhere and is exact on face regions (it underestimates the outside
// distance near edges; oracles that consume it allow one-voxel slack).
// ---------------------------------------------------------------------------

struct HalfSpace {
  Vec3 normal;    // unit outward normal
  double offset;  // points satisfy normal . p <= offset
};

struct Shape {
  enum class Kind { Sphere, Box, Cylinder, PlaneSet, Union };

  Kind kind = Kind::Sphere;
  double radius = 0.0;       // Sphere, Cylinder
  double half_height = 0.0;  // Cylinder (axis +z, centered)
  Vec3 half_extents = Vec3::Zero();             // Box (centered)
  std::vector<HalfSpace> planes;                // PlaneSet (convex)
  std::vector<std::pair<Shape, RigidTransform>> children;  // Union

  double signed_distance(const Vec3& p) const;
  std::optional<double> raycast(const Vec3& origin, const Vec3& dir) const;
  void sample_surface(double spacing, PointCloud* out) const;
  Aabb bounds() const;
  std::vector<Vec3> plane_set_vertices() const;
};

inline Shape make_sphere(double radius) {
  Shape s;
  s.kind = Shape::Kind::Sphere;
  s.radius = radius;
  return s;
}

inline Shape make_box(const Vec3& half_extents) {
  Shape s;
  s.kind = Shape::Kind::Box;
  s.half_extents = half_extents;
  return s;
}

inline Shape make_cylinder(double radius, double half_height) {
  Shape s;
  s.kind = Shape::Kind::Cylinder;
  s.radius = radius;
  s.half_height = half_height;
  return s;
}

inline Shape make_plane_set(std::vector<HalfSpace> planes) {
  Shape s;
  s.kind = Shape::Kind::PlaneSet;
  s.planes = std::move(planes);
  for (auto& h : s.planes) {
    const double n = h.normal.norm();
    if (n < 1e-12) throw SceneError("plane-set shape has a degenerate plane normal");
    h.normal /= n;
    h.offset /= n;
  }
  return s;
}

inline Shape make_union(std::vector<std::pair<Shape, RigidTransform>> children) {
  Shape s;
  s.kind = Shape::Kind::Union;
  s.children = std::move(children);
  return s;
}

inline double Shape::signed_distance(const Vec3& p) const {
  switch (kind) {
    case Kind::Sphere:
      return p.norm() - radius;
    case Kind::Box: {
      const Vec3 q = p.cwiseAbs() - half_extents;
      const Vec3 outside = q.cwiseMax(0.0);
      const double inside = std::min(q.maxCoeff(), 0.0);
      return outside.norm() + inside;
    }
    case Kind::Cylinder: {
      const double dr = std::hypot(p.x(), p.y()) - radius;
      const double dz = std::abs(p.z()) - half_height;
      const double ox = std::max(dr, 0.0);
      const double oz = std::max(dz, 0.0);
      return std::hypot(ox, oz) + std::min(std::max(dr, dz), 0.0);
    }
    case Kind::PlaneSet: {
      double d = -std::numeric_limits<double>::infinity();
      for (const auto& h : planes) d = std::max(d, h.normal.dot(p) - h.offset);
      return d;
    }
    case Kind::Union: {
      double d = std::numeric_limits<double>::infinity();
      for (const auto& [child, pose] : children) d = std::min(d, child.signed_distance(pose.inverse() * p));
      return d;
    }
  }
  return std::numeric_limits<double>::infinity();
}

namespace detail {

constexpr double kRayEps = 1e-9;

inline std::optional<double> smallest_positive(double t0, double t1) {
  if (t0 > t1) std::swap(t0, t1);
  if (t0 > kRayEps) return t0;
  if (t1 > kRayEps) return t1;
  return std::nullopt;
}

}  // namespace detail

inline std::optional<double> Shape::raycast(const Vec3& origin, const Vec3& dir) const {
  switch (kind) {
    case Kind::Sphere: {
      const double b = origin.dot(dir);
      const double c = origin.squaredNorm() - radius * radius;
      const double disc = b * b - c;
      if (disc < 0.0) return std::nullopt;
      const double sq = std::sqrt(disc);
      return detail::smallest_positive(-b - sq, -b + sq);
    }
    case Kind::Box: {
      double tmin = -std::numeric_limits<double>::infinity();
      double tmax = std::numeric_limits<double>::infinity();
      for (int a = 0; a < 3; ++a) {
        if (std::abs(dir[a]) < 1e-15) {
          if (std::abs(origin[a]) > half_extents[a]) return std::nullopt;
          continue;
        }
        double t0 = (-half_extents[a] - origin[a]) / dir[a];
        double t1 = (half_extents[a] - origin[a]) / dir[a];
        if (t0 > t1) std::swap(t0, t1);
        tmin = std::max(tmin, t0);
        tmax = std::min(tmax, t1);
      }
      if (tmin > tmax) return std::nullopt;
      return detail::smallest_positive(tmin, tmax);
    }
    case Kind::Cylinder: {
      std::optional<double> best;
      auto consider = [&](double t) {
        if (t > detail::kRayEps && (!best || t < *best)) best = t;
      };
      // Lateral surface.
      const double a = dir.x() * dir.x() + dir.y() * dir.y();
      if (a > 1e-15) {
        const double b = origin.x() * dir.x() + origin.y() * dir.y();
        const double c = origin.x() * origin.x() + origin.y() * origin.y() - radius * radius;
        const double disc = b * b - a * c;
        if (disc >= 0.0) {
          const double sq = std::sqrt(disc);
          for (double t : {(-b - sq) / a, (-b + sq) / a}) {
            if (std::abs(origin.z() + t * dir.z()) <= half_height) consider(t);
          }
        }
      }
      // End caps.
      if (std::abs(dir.z()) > 1e-15) {
        for (double zc : {-half_height, half_height}) {
          const double t = (zc - origin.z()) / dir.z();
          const double x = origin.x() + t * dir.x();
          const double y = origin.y() + t * dir.y();
          if (x * x + y * y <= radius * radius) consider(t);
        }
      }
      return best;
    }
    case Kind::PlaneSet: {
      double tmin = -std::numeric_limits<double>::infinity();
      double tmax = std::numeric_limits<double>::infinity();
      for (const auto& h : planes) {
        const double denom = h.normal.dot(dir);
        const double num = h.offset - h.normal.dot(origin);
        if (std::abs(denom) < 1e-15) {
          if (num < 0.0) return std::nullopt;
          continue;
        }
        const double t = num / denom;
        if (denom > 0.0)
          tmax = std::min(tmax, t);
        else
          tmin = std::max(tmin, t);
      }
      if (tmin > tmax) return std::nullopt;
      return detail::smallest_positive(tmin, tmax);
    }
    case Kind::Union: {
      std::optional<double> best;
      for (const auto& [child, pose] : children) {
        const RigidTransform inv = pose.inverse();
        const auto t = child.raycast(inv * origin, inv.rotation_matrix() * dir);
        if (t && (!best || *t < *best)) best = t;
      }
      return best;
    }
  }
  return std::nullopt;
}

inline std::vector<Vec3> Shape::plane_set_vertices() const {
  if (kind != Kind::PlaneSet) throw SceneError("plane_set_vertices on a non-plane-set shape");
  std::vector<Vec3> verts;
  const int n = static_cast<int>(planes.size());
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      for (int k = j + 1; k < n; ++k) {
        Mat3 A;
        A.row(0) = planes[i].normal;
        A.row(1) = planes[j].normal;
        A.row(2) = planes[k].normal;
        if (std::abs(A.determinant()) < 1e-10) continue;
        const Vec3 b(planes[i].offset, planes[j].offset, planes[k].offset);
        const Vec3 v = A.inverse() * b;
        bool feasible = true;
        for (const auto& h : planes) {
          if (h.normal.dot(v) > h.offset + 1e-9) {
            feasible = false;
            break;
          }
        }
        if (!feasible) continue;
        bool duplicate = false;
        for (const auto& w : verts)
          if ((w - v).norm() < 1e-9) {
            duplicate = true;
            break;
          }
        if (!duplicate) verts.push_back(v);
      }
  if (verts.empty()) throw SceneError("plane-set shape is empty or unbounded");
  return verts;
}

inline Aabb Shape::bounds() const {
  Aabb box;
  switch (kind) {
    case Kind::Sphere:
      box.expand(Vec3(-radius, -radius, -radius));
      box.expand(Vec3(radius, radius, radius));
      break;
    case Kind::Box:
      box.expand(-half_extents);
      box.expand(half_extents);
      break;
    case Kind::Cylinder:
      box.expand(Vec3(-radius, -radius, -half_height));
      box.expand(Vec3(radius, radius, half_height));
      break;
    case Kind::PlaneSet:
      for (const auto& v : plane_set_vertices()) box.expand(v);
      break;
    case Kind::Union:
      for (const auto& [child, pose] : children) {
        const Aabb cb = child.bounds();
        for (int corner = 0; corner < 8; ++corner) {
          const Vec3 c(corner & 1 ? cb.max.x() : cb.min.x(), corner & 2 ? cb.max.y() : cb.min.y(),
                       corner & 4 ? cb.max.z() : cb.min.z());
          box.expand(pose * c);
        }
      }
      break;
  }
  return box;
}

namespace detail {

inline void append_sample(PointCloud* out, const Vec3& p) { out->points.push_back(p); }

// Deterministic grid over one supporting plane of a convex plane set; points
// on that plane are kept when they satisfy every other half space.
inline void sample_plane_face(const Shape& shape, int plane_index, double spacing,
                              PointCloud* out) {
  const HalfSpace& h = shape.planes[plane_index];
  Vec3 u = h.normal.cross(std::abs(h.normal.z()) < 0.9 ? Vec3(0, 0, 1) : Vec3(1, 0, 0));
  u.normalize();
  const Vec3 v = h.normal.cross(u);
  const Vec3 anchor = h.normal * h.offset;
  double lo_u = std::numeric_limits<double>::infinity(), hi_u = -lo_u;
  double lo_v = lo_u, hi_v = -lo_u;
  for (const auto& vert : shape.plane_set_vertices()) {
    const Vec3 rel = vert - anchor;
    lo_u = std::min(lo_u, rel.dot(u));
    hi_u = std::max(hi_u, rel.dot(u));
    lo_v = std::min(lo_v, rel.dot(v));
    hi_v = std::max(hi_v, rel.dot(v));
  }
  for (double a = lo_u + 0.5 * spacing; a <= hi_u; a += spacing)
    for (double b = lo_v + 0.5 * spacing; b <= hi_v; b += spacing) {
      const Vec3 p = anchor + a * u + b * v;
      bool inside = true;
      for (int j = 0; j < static_cast<int>(shape.planes.size()); ++j) {
        if (j == plane_index) continue;
        if (shape.planes[j].normal.dot(p) > shape.planes[j].offset - 1e-9) {
          inside = false;
          break;
        }
      }
      if (inside) append_sample(out, p);
    }
}

}  // namespace detail

inline void Shape::sample_surface(double spacing, PointCloud* out) const {
  switch (kind) {
    case Kind::Sphere: {
      const double area = 4.0 * M_PI * radius * radius;
      const int n = std::max(32, static_cast<int>(area / (spacing * spacing)));
      const double golden = M_PI * (3.0 - std::sqrt(5.0));
      for (int i = 0; i < n; ++i) {
        const double z = 1.0 - 2.0 * (i + 0.5) / n;
        const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = golden * i;
        detail::append_sample(out, radius * Vec3(rho * std::cos(phi), rho * std::sin(phi), z));
      }
      break;
    }
    case Kind::Box: {
      for (int axis = 0; axis < 3; ++axis)
        for (int side = -1; side <= 1; side += 2) {
          const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
          for (double s = -half_extents[a1] + 0.5 * spacing; s <= half_extents[a1]; s += spacing)
            for (double t = -half_extents[a2] + 0.5 * spacing; t <= half_extents[a2];
                 t += spacing) {
              Vec3 p;
              p[axis] = side * half_extents[axis];
              p[a1] = s;
              p[a2] = t;
              detail::append_sample(out, p);
            }
        }
      break;
    }
    case Kind::Cylinder: {
      const int n_phi = std::max(8, static_cast<int>(2.0 * M_PI * radius / spacing));
      for (int i = 0; i < n_phi; ++i) {
        const double phi = 2.0 * M_PI * (i + 0.5) / n_phi;
        for (double z = -half_height + 0.5 * spacing; z <= half_height; z += spacing)
          detail::append_sample(out, Vec3(radius * std::cos(phi), radius * std::sin(phi), z));
      }
      for (int side = -1; side <= 1; side += 2) {
        const double z = side * half_height;
        for (double r = 0.5 * spacing; r < radius; r += spacing) {
          const int m = std::max(6, static_cast<int>(2.0 * M_PI * r / spacing));
          for (int i = 0; i < m; ++i) {
            const double phi = 2.0 * M_PI * (i + 0.5) / m;
            detail::append_sample(out, Vec3(r * std::cos(phi), r * std::sin(phi), z));
          }
        }
      }
      break;
    }
    case Kind::PlaneSet: {
      for (int i = 0; i < static_cast<int>(planes.size()); ++i)
        detail::sample_plane_face(*this, i, spacing, out);
      break;
    }
    case Kind::Union: {
      for (const auto& [child, pose] : children) {
        PointCloud local;
        child.sample_surface(spacing, &local);
        for (const auto& p : local.points) {
          const Vec3 world = pose * p;
          // Drop samples swallowed by a sibling's interior.
          bool interior = false;
          for (const auto& [other, other_pose] : children) {
            if (&other == &child) continue;
            if (other.signed_distance(other_pose.inverse() * world) < -1e-9) {
              interior = true;
              break;
            }
          }
          if (!interior) detail::append_sample(out, world);
        }
      }
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Scenes.
// ---------------------------------------------------------------------------

struct SensorSpec {
  int width = 320;
  int height = 240;
  CameraIntrinsics intrinsics{260.0, 260.0, 159.5, 119.5};
  double max_depth = 6.0;          // deeper hits become invalid pixels
  double depth_noise_coeff = 0.0;  // sigma(d) = coeff * d^2  [m]
  double invalid_prob = 0.0;       // chance a valid pixel is dropped
};

struct Instance {
  int prototype = 0;          // index into SceneSpec::prototypes
  RigidTransform pose;        // world <- object
};

struct SceneSpec {
  std::string name = "scene";
  std::uint64_t seed = 1;
  std::vector<std::pair<std::string, Shape>> prototypes;
  std::vector<Instance> instances;
  int floor_instance = -1;  // index into instances, -1 when the scene has no floor
  std::vector<RigidTransform> trajectory;  // world <- camera per frame
  SensorSpec sensor;
};

struct RenderedFrame {
  DepthImage depth;                   // z-depth in meters, 0 = invalid
  Image<std::uint32_t> labels;        // 1-based instance id, 0 = no hit
};

inline Vec3 pixel_ray_camera(const CameraIntrinsics& k, int x, int y) {
  return Vec3((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
}

// Casts one world-space ray against every instance; returns (t, instance id).
inline std::optional<std::pair<double, int>> raycast_scene(const SceneSpec& spec,
                                                           const Vec3& origin, const Vec3& dir) {
  std::optional<std::pair<double, int>> best;
  for (int i = 0; i < static_cast<int>(spec.instances.size()); ++i) {
    const Instance& inst = spec.instances[i];
    const RigidTransform inv = inst.pose.inverse();
    const auto t = spec.prototypes[inst.prototype].second.raycast(inv * origin,
                                                                  inv.rotation_matrix() * dir);
    if (t && (!best || *t < best->first)) best = std::make_pair(*t, i + 1);
  }
  return best;
}

// Renders depth + ground-truth labels for one camera pose. Labels are always
// clean; sensor noise perturbs depth only. `noise_seed` pins the perturbation.
inline RenderedFrame render_frame(const SceneSpec& spec, const RigidTransform& world_from_camera,
                                  std::uint64_t noise_seed) {
  const SensorSpec& s = spec.sensor;
  if (!s.intrinsics.valid() || s.width <= 0 || s.height <= 0)
    throw SceneError("scene sensor parameters are invalid");
  RenderedFrame frame;
  frame.depth.depth = Image<float>(s.width, s.height, 0.0f);
  frame.depth.intrinsics = s.intrinsics;
  frame.labels = Image<std::uint32_t>(s.width, s.height, 0u);

  const Mat3 r_wc = world_from_camera.rotation_matrix();
  const Vec3 origin = world_from_camera.translation;
  const bool noisy = s.depth_noise_coeff > 0.0 || s.invalid_prob > 0.0;
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) {
      const Vec3 dir_cam = pixel_ray_camera(s.intrinsics, x, y);
      const double inv_norm = 1.0 / dir_cam.norm();
      const Vec3 dir_world = r_wc * (dir_cam * inv_norm);
      const auto hit = raycast_scene(spec, origin, dir_world);
      double depth = 0.0;
      std::uint32_t label = 0;
      if (hit) {
        depth = hit->first * inv_norm;  // projection onto the camera z axis
        label = static_cast<std::uint32_t>(hit->second);
      }
      if (noisy) {
        // Always consume the same random stream so the image is reproducible
        // regardless of the hit pattern.
        const double g = gauss(rng);
        const double u = uni(rng);
        if (depth > 0.0) {
          if (s.depth_noise_coeff > 0.0) depth += g * s.depth_noise_coeff * depth * depth;
          if (u < s.invalid_prob || depth <= 0.0) {
            depth = 0.0;
            label = 0;
          }
        }
      }
      if (depth > s.max_depth) {
        depth = 0.0;
        label = 0;
      }
      frame.depth.depth.at(x, y) = static_cast<float>(depth);
      frame.labels.at(x, y) = label;
    }
  return frame;
}

inline std::uint64_t frame_noise_seed(std::uint64_t scene_seed, int frame_index) {
  return scene_seed ^ (0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(frame_index + 1));
}

// Replaces each labeled pixel's id with a uniformly random *different* id
// drawn from the labels present in the frame, with probability `prob`.
inline Image<std::uint32_t> corrupt_labels(const Image<std::uint32_t>& labels, double prob,
                                           std::uint64_t seed) {
  std::vector<std::uint32_t> present;
  for (int y = 0; y < labels.height(); ++y)
    for (int x = 0; x < labels.width(); ++x) {
      const std::uint32_t l = labels.at(x, y);
      if (l != 0 && std::find(present.begin(), present.end(), l) == present.end())
        present.push_back(l);
    }
  std::sort(present.begin(), present.end());
  Image<std::uint32_t> out = labels;
  if (present.size() < 2 || prob <= 0.0) return out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, present.size() - 2);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x) {
      std::uint32_t& l = out.at(x, y);
      if (l == 0) continue;
      if (uni(rng) >= prob) continue;
      std::size_t idx = pick(rng);
      // Skip over the pixel's own label so the swap always changes it.
      std::size_t own = static_cast<std::size_t>(
          std::find(present.begin(), present.end(), l) - present.begin());
      if (idx >= own) ++idx;
      l = present[idx];
    }
  return out;
}

// ---------------------------------------------------------------------------
// Ground-truth oracles.
// ---------------------------------------------------------------------------

inline double instance_sdf(const SceneSpec& spec, int instance_index, const Vec3& p_world) {
  const Instance& inst = spec.instances.at(instance_index);
  return spec.prototypes[inst.prototype].second.signed_distance(inst.pose.inverse() * p_world);
}

inline double scene_sdf(const SceneSpec& spec, const Vec3& p_world) {
  double d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < static_cast<int>(spec.instances.size()); ++i)
    d = std::min(d, instance_sdf(spec, i, p_world));
  return d;
}

// World-frame surface samples of one instance (other instances may swallow
// parts of it; callers that care should filter with scene_sdf).
inline PointCloud instance_surface_points(const SceneSpec& spec, int instance_index,
                                          double spacing) {
  const Instance& inst = spec.instances.at(instance_index);
  PointCloud local;
  spec.prototypes[inst.prototype].second.sample_surface(spacing, &local);
  return local.transformed(inst.pose);
}

// Fraction of `gt` points whose nearest neighbour in `observed` is <= tol.
inline double coverage_fraction(const PointCloud& gt, const PointCloud& observed, double tol) {
  if (gt.empty()) return 0.0;
  if (observed.empty()) return 0.0;
  KdTree3 tree(observed.points);
  std::size_t hit = 0;
  for (const auto& p : gt.points) {
    const auto nn = tree.knn(p, 1);
    if (!nn.empty() && nn[0].second <= tol) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(gt.size());
}

// Analytic truncated signed-distance grid of one instance: every voxel whose
// center lies within `layout.truncation_distance` of the instance surface.
inline TsdfGrid analytic_instance_grid(const SceneSpec& spec, int instance_index,
                                       const GridLayout& layout) {
  TsdfGrid grid(layout);
  const Instance& inst = spec.instances.at(instance_index);
  const Shape& shape = spec.prototypes[inst.prototype].second;
  Aabb local = shape.bounds();
  Aabb world;
  for (int corner = 0; corner < 8; ++corner) {
    const Vec3 c(corner & 1 ? local.max.x() : local.min.x(),
                 corner & 2 ? local.max.y() : local.min.y(),
                 corner & 4 ? local.max.z() : local.min.z());
    world.expand(inst.pose * c);
  }
  world.inflate(layout.truncation_distance + layout.voxel_size);
  const VoxelIndex lo = grid.voxel_index(world.min);
  const VoxelIndex hi = grid.voxel_index(world.max);
  const RigidTransform inv = inst.pose.inverse();
  for (int z = lo.z; z <= hi.z; ++z)
    for (int y = lo.y; y <= hi.y; ++y)
      for (int x = lo.x; x <= hi.x; ++x) {
        const VoxelIndex v{x, y, z};
        const double d = shape.signed_distance(inv * grid.voxel_center(v));
        if (std::abs(d) <= layout.truncation_distance) grid.integrate_voxel(v, d, 1.0f);
      }
  return grid;
}

// Rejects scenes where one instance's interior pokes into another's. Resting
// contact (touching surfaces) is allowed. Throws SceneError on overlap.
inline void validate_scene(const SceneSpec& spec, double tolerance = 1e-3) {
  if (spec.prototypes.empty()) throw SceneError("scene has no prototypes");
  for (const auto& inst : spec.instances)
    if (inst.prototype < 0 || inst.prototype >= static_cast<int>(spec.prototypes.size()))
      throw SceneError("instance references an unknown prototype");
  if (spec.floor_instance >= static_cast<int>(spec.instances.size()))
    throw SceneError("floor instance index out of range");
  const double step = 0.02;
  for (int i = 0; i < static_cast<int>(spec.instances.size()); ++i) {
    PointCloud shell = instance_surface_points(spec, i, step);
    for (int j = 0; j < static_cast<int>(spec.instances.size()); ++j) {
      if (i == j) continue;
      for (const auto& p : shell.points)
        if (instance_sdf(spec, j, p) < -tolerance)
          throw SceneError("instances " + std::to_string(i) + " and " + std::to_string(j) +
                           " of scene '" + spec.name + "' interpenetrate");
    }
  }
}

// ---------------------------------------------------------------------------
// Scene spec text format (versioned, deterministic).
// ---------------------------------------------------------------------------

namespace detail {

inline void write_shape(std::ostream& out, const Shape& s, int indent_level) {
  const std::string pad(static_cast<std::size_t>(indent_level) * 2, ' ');
  out.precision(17);
  switch (s.kind) {
    case Shape::Kind::Sphere:
      out << pad << "sphere " << s.radius << "\n";
      break;
    case Shape::Kind::Box:
      out << pad << "box " << s.half_extents.x() << " " << s.half_extents.y() << " "
          << s.half_extents.z() << "\n";
      break;
    case Shape::Kind::Cylinder:
      out << pad << "cylinder " << s.radius << " " << s.half_height << "\n";
      break;
    case Shape::Kind::PlaneSet:
      out << pad << "planeset " << s.planes.size() << "\n";
      for (const auto& h : s.planes)
        out << pad << "  plane " << h.normal.x() << " " << h.normal.y() << " " << h.normal.z()
            << " " << h.offset << "\n";
      break;
    case Shape::Kind::Union:
      out << pad << "union " << s.children.size() << "\n";
      for (const auto& [child, pose] : s.children) {
        const auto& q = pose.rotation;
        out << pad << "  at " << pose.translation.x() << " " << pose.translation.y() << " "
            << pose.translation.z() << " " << q.x() << " " << q.y() << " " << q.z() << " "
            << q.w() << "\n";
        write_shape(out, child, indent_level + 1);
      }
      break;
  }
}

inline std::string next_spec_line(std::istream& in) {
  std::string line;
  while (std::getline(in, line)) {
    const auto pos = line.find_first_not_of(" \t\r");
    if (pos == std::string::npos) continue;
    if (line[pos] == '#') continue;
    return line.substr(pos);
  }
  throw IoError("scene spec ended unexpectedly");
}

inline RigidTransform parse_pose_tail(std::istringstream& ls, const std::string& context) {
  double tx, ty, tz, qx, qy, qz, qw;
  if (!(ls >> tx >> ty >> tz >> qx >> qy >> qz >> qw))
    throw IoError("malformed pose in scene spec (" + context + ")");
  return RigidTransform::from_parts(Eigen::Quaterniond(qw, qx, qy, qz), Vec3(tx, ty, tz));
}

inline Shape read_shape(std::istream& in) {
  std::istringstream ls(next_spec_line(in));
  std::string word;
  ls >> word;
  if (word == "sphere") {
    double r;
    if (!(ls >> r)) throw IoError("malformed sphere in scene spec");
    return make_sphere(r);
  }
  if (word == "box") {
    double x, y, z;
    if (!(ls >> x >> y >> z)) throw IoError("malformed box in scene spec");
    return make_box(Vec3(x, y, z));
  }
  if (word == "cylinder") {
    double r, hh;
    if (!(ls >> r >> hh)) throw IoError("malformed cylinder in scene spec");
    return make_cylinder(r, hh);
  }
  if (word == "planeset") {
    std::size_t n;
    if (!(ls >> n)) throw IoError("malformed planeset in scene spec");
    std::vector<HalfSpace> planes;
    planes.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::istringstream ps(next_spec_line(in));
      std::string tag;
      double nx, ny, nz, off;
      if (!(ps >> tag >> nx >> ny >> nz >> off) || tag != "plane")
        throw IoError("malformed plane in scene spec");
      planes.push_back({Vec3(nx, ny, nz), off});
    }
    return make_plane_set(std::move(planes));
  }
  if (word == "union") {
    std::size_t n;
    if (!(ls >> n)) throw IoError("malformed union in scene spec");
    std::vector<std::pair<Shape, RigidTransform>> children;
    children.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::istringstream ps(next_spec_line(in));
      std::string tag;
      ps >> tag;
      if (tag != "at") throw IoError("union child missing 'at' pose in scene spec");
      RigidTransform pose = parse_pose_tail(ps, "union child");
      Shape child = read_shape(in);
      children.emplace_back(std::move(child), pose);
    }
    return make_union(std::move(children));
  }
  throw IoError("unknown shape kind in scene spec: " + word);
}

}  // namespace detail

inline void write_scene_spec(const SceneSpec& spec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.precision(17);
  out << "# objdb-scene v1\n";
  out << "scene " << spec.name << "\n";
  out << "seed " << spec.seed << "\n";
  out << "sensor " << spec.sensor.width << " " << spec.sensor.height << " "
      << spec.sensor.intrinsics.fx << " " << spec.sensor.intrinsics.fy << " "
      << spec.sensor.intrinsics.cx << " " << spec.sensor.intrinsics.cy << " "
      << spec.sensor.max_depth << " " << spec.sensor.depth_noise_coeff << " "
      << spec.sensor.invalid_prob << "\n";
  out << "prototypes " << spec.prototypes.size() << "\n";
  for (const auto& [name, shape] : spec.prototypes) {
    out << "prototype " << name << "\n";
    detail::write_shape(out, shape, 1);
  }
  out << "instances " << spec.instances.size() << "\n";
  for (const auto& inst : spec.instances) {
    const auto& q = inst.pose.rotation;
    out << "instance " << inst.prototype << " " << inst.pose.translation.x() << " "
        << inst.pose.translation.y() << " " << inst.pose.translation.z() << " " << q.x() << " "
        << q.y() << " " << q.z() << " " << q.w() << "\n";
  }
  out << "floor " << spec.floor_instance << "\n";
  out << "trajectory " << spec.trajectory.size() << "\n";
  for (const auto& pose : spec.trajectory) {
    const auto& q = pose.rotation;
    out << "pose " << pose.translation.x() << " " << pose.translation.y() << " "
        << pose.translation.z() << " " << q.x() << " " << q.y() << " " << q.z() << " " << q.w()
        << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

inline SceneSpec read_scene_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::string header;
  std::getline(in, header);
  if (header.rfind("# objdb-scene v1", 0) != 0)
    throw IoError("not a scene spec (missing version header): " + path);
  SceneSpec spec;
  auto expect = [&](const std::string& key) {
    std::istringstream ls(detail::next_spec_line(in));
    std::string word;
    ls >> word;
    if (word != key) throw IoError("scene spec expected '" + key + "', found '" + word + "'");
    return ls;
  };
  {
    auto ls = expect("scene");
    ls >> spec.name;
  }
  {
    auto ls = expect("seed");
    if (!(ls >> spec.seed)) throw IoError("malformed seed in scene spec");
  }
  {
    auto ls = expect("sensor");
    if (!(ls >> spec.sensor.width >> spec.sensor.height >> spec.sensor.intrinsics.fx >>
          spec.sensor.intrinsics.fy >> spec.sensor.intrinsics.cx >> spec.sensor.intrinsics.cy >>
          spec.sensor.max_depth >> spec.sensor.depth_noise_coeff >> spec.sensor.invalid_prob))
      throw IoError("malformed sensor line in scene spec");
  }
  std::size_t n_proto = 0;
  {
    auto ls = expect("prototypes");
    if (!(ls >> n_proto)) throw IoError("malformed prototypes count");
  }
  for (std::size_t i = 0; i < n_proto; ++i) {
    auto ls = expect("prototype");
    std::string name;
    ls >> name;
    spec.prototypes.emplace_back(name, detail::read_shape(in));
  }
  std::size_t n_inst = 0;
  {
    auto ls = expect("instances");
    if (!(ls >> n_inst)) throw IoError("malformed instances count");
  }
  for (std::size_t i = 0; i < n_inst; ++i) {
    auto ls = expect("instance");
    Instance inst;
    if (!(ls >> inst.prototype)) throw IoError("malformed instance line");
    inst.pose = detail::parse_pose_tail(ls, "instance");
    spec.instances.push_back(inst);
  }
  {
    auto ls = expect("floor");
    if (!(ls >> spec.floor_instance)) throw IoError("malformed floor line");
  }
  std::size_t n_pose = 0;
  {
    auto ls = expect("trajectory");
    if (!(ls >> n_pose)) throw IoError("malformed trajectory count");
  }
  for (std::size_t i = 0; i < n_pose; ++i) {
    auto ls = expect("pose");
    spec.trajectory.push_back(detail::parse_pose_tail(ls, "trajectory"));
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Camera helpers.
// ---------------------------------------------------------------------------

// world <- camera pose with +z looking at `target` and +y pointing downward
// (image row direction); `eye` must differ from `target`.
inline RigidTransform look_at(const Vec3& eye, const Vec3& target) {
  Vec3 forward = target - eye;
  const double n = forward.norm();
  if (n < 1e-12) throw SceneError("look_at eye and target coincide");
  forward /= n;
  Vec3 down(0.0, 0.0, -1.0);
  if (std::abs(forward.dot(down)) > 0.999) down = Vec3(1.0, 0.0, 0.0);
  Vec3 right = down.cross(forward).normalized();
  const Vec3 y_cam = forward.cross(right);
  Mat3 r;
  r.col(0) = right;
  r.col(1) = y_cam;
  r.col(2) = forward;
  return RigidTransform::from_parts(Eigen::Quaterniond(r), eye);
}

// Poses on a circle of radius `radius` around `center`, at elevation angle
// `elevation_rad` above the horizontal plane, looking at `center`.
inline std::vector<RigidTransform> orbit_arc(const Vec3& center, double radius,
                                             double elevation_rad, double azimuth_begin_rad,
                                             double azimuth_end_rad, int count) {
  std::vector<RigidTransform> poses;
  poses.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double t = count == 1 ? 0.5 : static_cast<double>(i) / (count - 1);
    const double phi = azimuth_begin_rad + t * (azimuth_end_rad - azimuth_begin_rad);
    const Vec3 eye = center + radius * Vec3(std::cos(phi) * std::cos(elevation_rad),
                                            std::sin(phi) * std::cos(elevation_rad),
                                            std::sin(elevation_rad));
    poses.push_back(look_at(eye, center));
  }
  return poses;
}

// ---------------------------------------------------------------------------
// Benchmark scenes.
// ---------------------------------------------------------------------------

struct Benchmark {
  std::string name;
  std::vector<SceneSpec> sessions;
};

namespace detail {

// Convex ten-faced "crate": a box with chamfered vertical edges and a tilted
// top. The tilt breaks every mirror and 180-degree symmetry, so registration
// between partial views has a unique answer, while the chamfers give narrow
// camera arcs a usable surface-coverage granularity. Local origin at the
// bottom-face center, which sits on z = 0.
inline Shape make_crate(double hx, double hy, double height, double corner_cut,
                        const Vec3& top_tilt) {
  std::vector<HalfSpace> planes;
  planes.push_back({Vec3(1, 0, 0), hx});
  planes.push_back({Vec3(-1, 0, 0), hx});
  planes.push_back({Vec3(0, 1, 0), hy});
  planes.push_back({Vec3(0, -1, 0), hy});
  const double diag_offset = (hx + hy - corner_cut) / std::sqrt(2.0);
  for (double sx : {-1.0, 1.0})
    for (double sy : {-1.0, 1.0})
      planes.push_back({Vec3(sx, sy, 0.0) / std::sqrt(2.0), diag_offset});
  planes.push_back({Vec3(0, 0, -1), 0.0});
  const Vec3 top_n = Vec3(top_tilt.x(), top_tilt.y(), 1.0);
  planes.push_back({top_n, top_n.dot(Vec3(0, 0, height))});
  return make_plane_set(std::move(planes));
}

inline Shape benchmark_crate() {
  return make_crate(0.24, 0.18, 0.30, 0.12, Vec3(0.20, 0.12, 0.0));
}

inline RigidTransform yaw_place(double x, double y, double z, double yaw) {
  return RigidTransform::from_parts(
      Eigen::Quaterniond(Eigen::AngleAxisd(yaw, Vec3::UnitZ())), Vec3(x, y, z));
}

inline SceneSpec desk_scene_base(const std::string& name, std::uint64_t seed) {
  SceneSpec spec;
  spec.name = name;
  spec.seed = seed;
  spec.prototypes.emplace_back("crate", benchmark_crate());
  spec.prototypes.emplace_back("barrel", make_cylinder(0.09, 0.14));
  spec.prototypes.emplace_back("ball", make_sphere(0.09));
  spec.prototypes.emplace_back("floor", make_box(Vec3(1.2, 0.9, 0.02)));
  return spec;
}

}  // namespace detail

// `two-view`: one asymmetric convex object floating in empty space, observed
// from two azimuth arcs that each cover well under three quarters of the
// surface while their union covers essentially all of it.
//
// `repeat-3`: a floor plus three crates (same prototype, different poses), a
// barrel and a ball - six ground-truth instances - observed by a full orbit.
//
// `session-pair`: the same prototypes rearranged between two sessions whose
// trajectories cover roughly opposite sides, so cross-session merging can
// complete each partially observed instance.
inline Benchmark make_benchmark(const std::string& name) {
  Benchmark bench;
  bench.name = name;
  if (name == "two-view") {
    SceneSpec base;
    base.name = "two-view-a";
    base.seed = 101;
    base.prototypes.emplace_back("crate", detail::benchmark_crate());
    Instance inst;
    inst.prototype = 0;
    inst.pose = RigidTransform::from_translation(Vec3(0.0, 0.0, -0.15));
    base.instances.push_back(inst);
    // One narrow arc from above the object, one from below on the far side.
    // Each view set misses the opposite pole and the faces turned away from
    // it; together they see every face, and both see the two long side faces.
    const Vec3 center(0.0, 0.0, 0.0);
    const double radius = 1.05;
    const double elev = deg_to_rad(33.0);
    base.trajectory = orbit_arc(center, radius, elev, deg_to_rad(-40.0), deg_to_rad(40.0), 13);
    SceneSpec second = base;
    second.name = "two-view-b";
    second.seed = 102;
    second.trajectory =
        orbit_arc(center, radius, -elev, deg_to_rad(140.0), deg_to_rad(220.0), 13);
    bench.sessions = {base, second};
  } else if (name == "repeat-3") {
    SceneSpec spec = detail::desk_scene_base("repeat-3", 301);
    Instance floor;
    floor.prototype = 3;
    floor.pose = RigidTransform::from_translation(Vec3(0.0, 0.0, -0.02));
    spec.instances.push_back(floor);
    spec.floor_instance = 0;
    for (const auto& [x, y, yaw] :
         std::vector<std::array<double, 3>>{{-0.50, -0.25, 0.3}, {0.38, -0.32, 2.1}, {0.05, 0.46, 4.0}}) {
      Instance inst;
      inst.prototype = 0;
      inst.pose = detail::yaw_place(x, y, 0.0, yaw);
      spec.instances.push_back(inst);
    }
    Instance barrel;
    barrel.prototype = 1;
    barrel.pose = RigidTransform::from_translation(Vec3(-0.55, 0.45, 0.14));
    spec.instances.push_back(barrel);
    Instance ball;
    ball.prototype = 2;
    ball.pose = RigidTransform::from_translation(Vec3(0.68, 0.32, 0.09));
    spec.instances.push_back(ball);
    spec.trajectory = orbit_arc(Vec3(0.0, 0.0, 0.05), 1.9, deg_to_rad(34.0), 0.0,
                                deg_to_rad(345.0), 24);
    bench.sessions = {spec};
  } else if (name == "session-pair") {
    SceneSpec a = detail::desk_scene_base("session-a", 501);
    Instance floor;
    floor.prototype = 3;
    floor.pose = RigidTransform::from_translation(Vec3(0.0, 0.0, -0.02));
    a.instances.push_back(floor);
    a.floor_instance = 0;
    SceneSpec b = a;
    b.name = "session-b";
    b.seed = 502;
    auto add = [](SceneSpec& spec, int proto, const RigidTransform& pose) {
      Instance inst;
      inst.prototype = proto;
      inst.pose = pose;
      spec.instances.push_back(inst);
    };
    add(a, 0, detail::yaw_place(-0.42, -0.18, 0.0, 0.5));
    add(a, 1, RigidTransform::from_translation(Vec3(0.40, -0.22, 0.14)));
    add(a, 2, RigidTransform::from_translation(Vec3(0.05, 0.42, 0.09)));
    add(b, 0, detail::yaw_place(0.30, 0.30, 0.0, 3.6));
    add(b, 1, RigidTransform::from_translation(Vec3(-0.45, 0.25, 0.14)));
    add(b, 2, RigidTransform::from_translation(Vec3(-0.10, -0.45, 0.09)));
    const Vec3 center(0.0, 0.0, 0.05);
    a.trajectory = orbit_arc(center, 1.9, deg_to_rad(34.0), deg_to_rad(-75.0), deg_to_rad(75.0), 11);
    b.trajectory = orbit_arc(center, 1.9, deg_to_rad(34.0), deg_to_rad(105.0), deg_to_rad(255.0), 11);
    bench.sessions = {a, b};
  } else {
    throw SceneError("unknown benchmark: " + name +
                     " (expected two-view, repeat-3, or session-pair)");
  }
  for (auto& session : bench.sessions) validate_scene(session);
  return bench;
}

// ---------------------------------------------------------------------------
// Dataset emission: depth/label images plus trajectory and spec files.
// ---------------------------------------------------------------------------

constexpr double kDepthScale = 1000.0;  // 16-bit PGM depth value = millimeters

inline std::string frame_file_name(const std::string& stem, int index, const std::string& ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%04d.%s", stem.c_str(), index, ext.c_str());
  return buf;
}

inline Image<std::uint16_t> encode_depth(const Image<float>& depth) {
  Image<std::uint16_t> out(depth.width(), depth.height(), 0);
  for (int y = 0; y < depth.height(); ++y)
    for (int x = 0; x < depth.width(); ++x) {
      const double d = depth.at(x, y);
      const double q = std::round(d * kDepthScale);
      out.at(x, y) = static_cast<std::uint16_t>(std::clamp(q, 0.0, 65535.0));
    }
  return out;
}

inline Image<float> decode_depth(const Image<std::uint16_t>& raw) {
  Image<float> out(raw.width(), raw.height(), 0.0f);
  for (int y = 0; y < raw.height(); ++y)
    for (int x = 0; x < raw.width(); ++x)
      out.at(x, y) = static_cast<float>(raw.at(x, y) / kDepthScale);
  return out;
}

inline Image<std::uint16_t> encode_labels(const Image<std::uint32_t>& labels) {
  Image<std::uint16_t> out(labels.width(), labels.height(), 0);
  for (int y = 0; y < labels.height(); ++y)
    for (int x = 0; x < labels.width(); ++x) {
      const std::uint32_t l = labels.at(x, y);
      if (l > 65535u) throw SceneError("label id exceeds 16-bit image range");
      out.at(x, y) = static_cast<std::uint16_t>(l);
    }
  return out;
}

inline Image<std::uint32_t> decode_labels(const Image<std::uint16_t>& raw) {
  Image<std::uint32_t> out(raw.width(), raw.height(), 0u);
  for (int y = 0; y < raw.height(); ++y)
    for (int x = 0; x < raw.width(); ++x) out.at(x, y) = raw.at(x, y);
  return out;
}

// Renders every trajectory pose of `spec` into `dir`:
//   scene.txt, trajectory.txt, depth_NNNN.pgm, labels_NNNN.pgm
// Depth is quantized to 0.2 mm; labels hold ground-truth instance ids.
inline void generate_dataset(const SceneSpec& spec, const std::string& dir) {
  validate_scene(spec);
  write_scene_spec(spec, dir + "/scene.txt");
  Trajectory traj;
  traj.intrinsics = spec.sensor.intrinsics;
  traj.width = spec.sensor.width;
  traj.height = spec.sensor.height;
  for (int i = 0; i < static_cast<int>(spec.trajectory.size()); ++i)
    traj.frames.emplace_back(i, spec.trajectory[i]);
  write_trajectory(traj, dir + "/trajectory.txt");
  for (int i = 0; i < static_cast<int>(spec.trajectory.size()); ++i) {
    const RenderedFrame frame =
        render_frame(spec, spec.trajectory[i], frame_noise_seed(spec.seed, i));
    write_pgm16(encode_depth(frame.depth.depth), dir + "/" + frame_file_name("depth", i, "pgm"));
    write_pgm16(encode_labels(frame.labels), dir + "/" + frame_file_name("labels", i, "pgm"));
  }
}

}  // namespace objdb::synth
