#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "geometry.hpp"
#include "kdtree.hpp"

namespace objdb {

struct FeatureError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Parameters for surface-feature extraction, descriptor matching, and the
// TSDF merge gates. Defaults are the reference operating point for 1 cm
// voxels; `tsdf_overlap_min` is a voxel count and must be rescaled by
// (0.01 / voxel_size)^3 when running at a different resolution.
struct DatabaseConfig {
  // Harris3D corner detector.
  double harris_radius = 0.03;              // neighborhood radius (m)
  int harris_min_neighbors = 10;            // below this the point is skipped
  double harris_curvature_threshold = 0.07; // min lambda3/(l1+l2+l3) prefilter
  double harris_response_threshold = 1e-6;  // min det(C) - 0.04 trace(C)^2

  // Intrinsic Shape Signatures detector.
  double iss_boundary_radius = 0.02;  // scan-border rejection neighborhood (m)
  double iss_salient_radius = 0.06;   // scatter-matrix neighborhood (m)
  double iss_non_max_radius = 0.08;   // non-max suppression radius (m)
  int iss_min_neighbors = 5;          // below this the point is skipped
  double iss_gamma_21 = 0.975;        // max lambda2/lambda1
  double iss_gamma_32 = 0.975;        // max lambda3/lambda2

  // FPFH descriptor.
  double fpfh_radius = 0.10;  // spherical neighborhood radius (m)

  // Descriptor matching and registration acceptance.
  double similarity_threshold = 0.4;  // min similarity for a kept match
  int match_knn = 5;                  // matches kept per query keypoint
  double icp_rmse_threshold = 0.02;   // max e_ICP of an accepted registration (m)

  // TSDF merge verification gates.
  double tsdf_rmse_threshold = 0.02;  // max RMSE over shared voxels (m)
  double tsdf_overlap_min = 1e4;      // min shared observed voxels (at 1 cm)

  // RANSAC-based planarity check.
  double plane_inlier_distance = 0.01;  // point-to-plane inlier distance (m)
  double plane_inlier_fraction = 0.9;   // fraction of points on one plane
  int plane_iterations = 200;
  std::uint64_t plane_seed = 7;

  // Coarse registration (RANSAC over correspondence triples).
  int ransac_iterations = 5000;
  double ransac_inlier_distance = 0.015;  // keypoint residual after T (m)
  int ransac_min_inliers = 8;

  // Fine registration (point-to-plane ICP).
  int icp_max_iterations = 60;
  double icp_correspondence_cutoff = 0.05;  // max correspondence distance (m)
  double icp_convergence_delta = 1e-6;      // stop when update is smaller
  int icp_max_points = 3000;                // stride-subsample source above this
};

// 33-bin FPFH histogram: three 11-bin blocks (alpha, phi, theta), jointly
// L1-normalized.
using Descriptor = std::array<double, 33>;
constexpr int kDescriptorBins = 33;
constexpr int kFpfhBinsPerFeature = 11;

struct PlaneFit {
  Vec3 normal = Vec3::UnitZ();  // unit normal; plane is normal . p + offset = 0
  double offset = 0.0;
  int inlier_count = 0;
};

namespace feature_detail {

inline int plane_inliers(const std::vector<Vec3>& points, const Vec3& n, double offset,
                         double max_distance) {
  int count = 0;
  for (const Vec3& p : points) {
    if (std::abs(n.dot(p) + offset) <= max_distance) ++count;
  }
  return count;
}

// Least-squares plane through the inliers of (n, offset): centroid plus the
// smallest-variance axis of the inlier scatter.
inline bool refit_plane(const std::vector<Vec3>& points, double max_distance, PlaneFit& fit) {
  Vec3 centroid = Vec3::Zero();
  int count = 0;
  for (const Vec3& p : points) {
    if (std::abs(fit.normal.dot(p) + fit.offset) <= max_distance) {
      centroid += p;
      ++count;
    }
  }
  if (count < 3) return false;
  centroid /= count;
  Mat3 scatter = Mat3::Zero();
  for (const Vec3& p : points) {
    if (std::abs(fit.normal.dot(p) + fit.offset) <= max_distance) {
      const Vec3 d = p - centroid;
      scatter += d * d.transpose();
    }
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eigen(scatter);
  Vec3 n = eigen.eigenvectors().col(0);
  const double norm = n.norm();
  if (norm < 1e-12) return false;
  n /= norm;
  fit.normal = n;
  fit.offset = -n.dot(centroid);
  fit.inlier_count = plane_inliers(points, n, fit.offset, max_distance);
  return true;
}

}  // namespace feature_detail

// Best plane found by seeded RANSAC over point triples, refined once by a
// least-squares fit on its inliers. Deterministic for a fixed seed.
inline PlaneFit fit_plane_ransac(const PointCloud& cloud, double inlier_distance,
                                 int iterations, std::uint64_t seed) {
  if (cloud.size() < 3) throw FeatureError("fit_plane_ransac: need at least 3 points");
  const auto& pts = cloud.points;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);

  PlaneFit best;
  best.inlier_count = -1;
  for (int it = 0; it < iterations; ++it) {
    const std::size_t a = pick(rng);
    const std::size_t b = pick(rng);
    const std::size_t c = pick(rng);
    if (a == b || a == c || b == c) continue;
    Vec3 n = (pts[b] - pts[a]).cross(pts[c] - pts[a]);
    const double norm = n.norm();
    if (norm < 1e-12) continue;
    n /= norm;
    const double offset = -n.dot(pts[a]);
    const int count = feature_detail::plane_inliers(pts, n, offset, inlier_distance);
    if (count > best.inlier_count) {
      best.normal = n;
      best.offset = offset;
      best.inlier_count = count;
    }
  }
  if (best.inlier_count < 0) throw FeatureError("fit_plane_ransac: no valid sample triple");

  PlaneFit refined = best;
  if (feature_detail::refit_plane(pts, inlier_distance, refined) &&
      refined.inlier_count > best.inlier_count) {
    best = refined;
  }
  return best;
}

// True when one plane explains at least `plane_inlier_fraction` of the cloud.
inline bool planarity_check(const PointCloud& cloud, const DatabaseConfig& cfg = {}) {
  if (cloud.size() < 3) throw FeatureError("planarity_check: need at least 3 points");
  const PlaneFit fit = fit_plane_ransac(cloud, cfg.plane_inlier_distance, cfg.plane_iterations,
                                        cfg.plane_seed);
  return fit.inlier_count >=
         cfg.plane_inlier_fraction * static_cast<double>(cloud.size());
}

namespace feature_detail {

// Eigenvalues of the covariance of `indices` around their centroid,
// descending (l1 >= l2 >= l3).
inline Vec3 scatter_eigenvalues(const std::vector<Vec3>& points, const std::vector<int>& indices,
                                const std::vector<double>* weights_by_index = nullptr) {
  Vec3 mean = Vec3::Zero();
  double weight_sum = 0.0;
  for (int j : indices) {
    const double w = weights_by_index ? (*weights_by_index)[static_cast<std::size_t>(j)] : 1.0;
    mean += w * points[static_cast<std::size_t>(j)];
    weight_sum += w;
  }
  if (weight_sum <= 0.0) return Vec3::Zero();
  mean /= weight_sum;
  Mat3 cov = Mat3::Zero();
  for (int j : indices) {
    const double w = weights_by_index ? (*weights_by_index)[static_cast<std::size_t>(j)] : 1.0;
    const Vec3 d = points[static_cast<std::size_t>(j)] - mean;
    cov += w * d * d.transpose();
  }
  cov /= weight_sum;
  Eigen::SelfAdjointEigenSolver<Mat3> eigen(cov);
  const Vec3 ascending = eigen.eigenvalues();
  return Vec3(ascending[2], ascending[1], ascending[0]);
}

// A point sits on the open border of a partial scan when its neighbors,
// projected into the tangent plane, leave an angular gap wider than 120
// degrees. Border points make unstable keypoints: the "structure" there is
// the scan cut, not the object.
inline bool is_scan_border(const PointCloud& cloud, const KdTree3& tree, int index,
                           double radius) {
  const Vec3& p = cloud.points[static_cast<std::size_t>(index)];
  const std::vector<int> nbrs = tree.radius_search(p, radius);
  if (nbrs.size() < 4) return true;  // includes self; too sparse to judge

  Vec3 n = cloud.normals[static_cast<std::size_t>(index)];
  if (n.squaredNorm() < 1e-12) return true;  // no usable normal: never a keypoint
  n.normalize();
  const Vec3 u = (std::abs(n.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY()).cross(n).normalized();
  const Vec3 v = n.cross(u);

  std::vector<double> angles;
  angles.reserve(nbrs.size());
  for (int j : nbrs) {
    if (j == index) continue;
    const Vec3 d = cloud.points[static_cast<std::size_t>(j)] - p;
    const double du = d.dot(u);
    const double dv = d.dot(v);
    if (du * du + dv * dv < 1e-16) continue;
    angles.push_back(std::atan2(dv, du));
  }
  if (angles.size() < 3) return true;
  std::sort(angles.begin(), angles.end());
  double max_gap = 2.0 * M_PI - (angles.back() - angles.front());
  for (std::size_t i = 1; i < angles.size(); ++i) {
    max_gap = std::max(max_gap, angles[i] - angles[i - 1]);
  }
  return max_gap > 2.0 * M_PI / 3.0;
}

struct Candidate {
  int index = -1;
  double score = 0.0;
};

// Keep candidates whose score is the strict maximum within `radius`
// (ties broken toward the lower point index).
inline std::vector<int> non_max_suppress(const std::vector<Vec3>& points,
                                         const std::vector<Candidate>& candidates,
                                         double radius) {
  std::vector<Vec3> positions;
  positions.reserve(candidates.size());
  for (const Candidate& c : candidates) {
    positions.push_back(points[static_cast<std::size_t>(c.index)]);
  }
  const KdTree3 tree(positions);
  std::vector<int> kept;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const std::vector<int> rivals = tree.radius_search(positions[i], radius);
    bool is_max = true;
    for (int r : rivals) {
      const std::size_t j = static_cast<std::size_t>(r);
      if (j == i) continue;
      if (candidates[j].score > candidates[i].score ||
          (candidates[j].score == candidates[i].score && candidates[j].index < candidates[i].index)) {
        is_max = false;
        break;
      }
    }
    if (is_max) kept.push_back(candidates[i].index);
  }
  return kept;
}

}  // namespace feature_detail

// Intrinsic Shape Signatures: points whose density-weighted local scatter has
// three well-separated axes, strongest in their neighborhood, and away from
// scan borders. Returns cloud point indices in ascending order.
inline std::vector<int> iss_keypoint_indices(const PointCloud& cloud, const KdTree3& tree,
                                             const DatabaseConfig& cfg = {}) {
  const std::size_t n = cloud.size();
  std::vector<double> density_weight(n, 1.0);
  std::vector<std::vector<int>> neighborhoods(n);
  for (std::size_t i = 0; i < n; ++i) {
    neighborhoods[i] = tree.radius_search(cloud.points[i], cfg.iss_salient_radius);
    const std::size_t count = neighborhoods[i].size();  // includes self
    density_weight[i] = count > 0 ? 1.0 / static_cast<double>(count) : 1.0;
  }

  std::vector<feature_detail::Candidate> candidates;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<int> others;
    others.reserve(neighborhoods[i].size());
    for (int j : neighborhoods[i]) {
      if (j != static_cast<int>(i)) others.push_back(j);
    }
    if (static_cast<int>(others.size()) < cfg.iss_min_neighbors) continue;
    const Vec3 eig = feature_detail::scatter_eigenvalues(cloud.points, others, &density_weight);
    if (eig[0] < 1e-15 || eig[1] < 1e-15) continue;
    // Salience floor: a perfectly flat (but laterally asymmetric) patch has
    // lambda3 = 0, which would pass the ratio tests vacuously.
    if (eig[2] <= 1e-12) continue;
    if (eig[1] / eig[0] >= cfg.iss_gamma_21) continue;
    if (eig[2] / eig[1] >= cfg.iss_gamma_32) continue;
    if (cloud.has_normals() &&
        feature_detail::is_scan_border(cloud, tree, static_cast<int>(i),
                                       cfg.iss_boundary_radius)) {
      continue;
    }
    candidates.push_back({static_cast<int>(i), eig[2]});
  }
  return feature_detail::non_max_suppress(cloud.points, candidates, cfg.iss_non_max_radius);
}

// Harris3D: corners where neighborhood normals span three directions. The
// response is det(C) - 0.04 trace(C)^2 of the normal covariance; a curvature
// prefilter (lambda3 over the eigenvalue sum of the position scatter) skips
// flat neighborhoods early. Returns cloud point indices in ascending order.
inline std::vector<int> harris_keypoint_indices(const PointCloud& cloud, const KdTree3& tree,
                                                const DatabaseConfig& cfg = {}) {
  if (!cloud.has_normals()) throw FeatureError("harris_keypoint_indices: normals required");
  std::vector<feature_detail::Candidate> candidates;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const std::vector<int> nbrs = tree.radius_search(cloud.points[i], cfg.harris_radius);
    if (static_cast<int>(nbrs.size()) < cfg.harris_min_neighbors) continue;

    const Vec3 eig = feature_detail::scatter_eigenvalues(cloud.points, nbrs);
    const double eig_sum = eig.sum();
    if (eig_sum <= 0.0 || eig[2] / eig_sum < cfg.harris_curvature_threshold) continue;

    // Unnormalized scatter of unit normals. Normalizing by count would cap
    // det at 1/27 < 0.04 * trace^2, driving the response negative on every
    // surface; the raw sum keeps planes (rank 1) and straight edges (rank 2)
    // negative while three-way corners score positive, growing with both
    // corner sharpness and support count.
    Mat3 normal_cov = Mat3::Zero();
    int used = 0;
    for (int j : nbrs) {
      Vec3 nj = cloud.normals[static_cast<std::size_t>(j)];
      const double norm = nj.norm();
      if (norm < 1e-12) continue;
      nj /= norm;
      normal_cov += nj * nj.transpose();
      ++used;
    }
    if (used < cfg.harris_min_neighbors) continue;
    const double response =
        normal_cov.determinant() - 0.04 * normal_cov.trace() * normal_cov.trace();
    if (response <= cfg.harris_response_threshold) continue;
    candidates.push_back({static_cast<int>(i), response});
  }
  return feature_detail::non_max_suppress(cloud.points, candidates, cfg.harris_radius);
}

// Union of Harris3D and ISS keypoints, deduplicated within `dedup_radius`
// (the grid voxel size): Harris points are kept first, then ISS points that
// do not collide with an already kept keypoint.
inline std::vector<Vec3> detect_keypoints(const PointCloud& cloud, double dedup_radius,
                                          const DatabaseConfig& cfg = {}) {
  if (!cloud.has_normals()) throw FeatureError("detect_keypoints: normals required");
  const KdTree3 tree(cloud.points);
  const std::vector<int> harris = harris_keypoint_indices(cloud, tree, cfg);
  const std::vector<int> iss = iss_keypoint_indices(cloud, tree, cfg);

  std::vector<Vec3> keypoints;
  keypoints.reserve(harris.size() + iss.size());
  auto try_add = [&](int index) {
    const Vec3& p = cloud.points[static_cast<std::size_t>(index)];
    for (const Vec3& kept : keypoints) {
      if ((kept - p).norm() <= dedup_radius) return;
    }
    keypoints.push_back(p);
  };
  for (int i : harris) try_add(i);
  for (int i : iss) try_add(i);
  return keypoints;
}

namespace feature_detail {

// Darboux-frame angular features of an oriented point pair: (alpha, phi,
// theta). The source is the endpoint whose normal is closer to the
// connecting line; ties keep the given order.
inline bool pair_features(const Vec3& p1, const Vec3& n1, const Vec3& p2, const Vec3& n2,
                          std::array<double, 3>& out) {
  Vec3 dp = p2 - p1;
  const double dist = dp.norm();
  if (dist < 1e-12) return false;
  Vec3 ns = n1, nt = n2;
  const double a1 = std::abs(n1.dot(dp)) / dist;
  const double a2 = std::abs(n2.dot(dp)) / dist;
  if (a2 > a1) {
    ns = n2;
    nt = n1;
    dp = -dp;
  }
  const Vec3 d_hat = dp / dist;
  Vec3 v = d_hat.cross(ns);
  const double v_norm = v.norm();
  if (v_norm < 1e-9) return false;  // normal parallel to the line: frame undefined
  v /= v_norm;
  const Vec3 w = ns.cross(v);
  out[0] = v.dot(nt);                         // alpha in [-1, 1]
  out[1] = ns.dot(d_hat);                     // phi in [-1, 1]
  out[2] = std::atan2(w.dot(nt), ns.dot(nt)); // theta in (-pi, pi]
  return true;
}

inline int fpfh_bin(double value, double lo, double hi) {
  const double t = (value - lo) / (hi - lo);
  const int bin = static_cast<int>(std::floor(t * kFpfhBinsPerFeature));
  return std::clamp(bin, 0, kFpfhBinsPerFeature - 1);
}

// Simplified point feature histogram of one point against its neighbors;
// each 11-bin block sums to 1 when any pair was valid.
inline Descriptor spfh(const PointCloud& cloud, const KdTree3& tree, int index, double radius) {
  Descriptor hist{};
  const Vec3& p = cloud.points[static_cast<std::size_t>(index)];
  const Vec3& n = cloud.normals[static_cast<std::size_t>(index)];
  const std::vector<int> nbrs = tree.radius_search(p, radius);
  int pairs = 0;
  for (int j : nbrs) {
    if (j == index) continue;
    std::array<double, 3> f{};
    if (!pair_features(p, n, cloud.points[static_cast<std::size_t>(j)],
                       cloud.normals[static_cast<std::size_t>(j)], f)) {
      continue;
    }
    ++pairs;
    hist[static_cast<std::size_t>(fpfh_bin(f[0], -1.0, 1.0))] += 1.0;
    hist[static_cast<std::size_t>(kFpfhBinsPerFeature + fpfh_bin(f[1], -1.0, 1.0))] += 1.0;
    hist[static_cast<std::size_t>(2 * kFpfhBinsPerFeature + fpfh_bin(f[2], -M_PI, M_PI))] += 1.0;
  }
  if (pairs > 0) {
    for (double& b : hist) b /= static_cast<double>(pairs);
  }
  return hist;
}

}  // namespace feature_detail

// One 33-bin FPFH histogram per keypoint: the keypoint's own simplified
// histogram plus the distance-weighted mean of its neighbors', L1-normalized.
// Keypoints are snapped to their nearest cloud point.
inline std::vector<Descriptor> describe_keypoints(const PointCloud& cloud,
                                                  const std::vector<Vec3>& keypoints,
                                                  const DatabaseConfig& cfg = {}) {
  if (!cloud.has_normals()) throw FeatureError("describe_keypoints: normals required");
  if (cloud.empty()) throw FeatureError("describe_keypoints: empty cloud");
  const KdTree3 tree(cloud.points);

  std::unordered_map<int, Descriptor> spfh_cache;
  auto spfh_of = [&](int index) -> const Descriptor& {
    auto it = spfh_cache.find(index);
    if (it == spfh_cache.end()) {
      it = spfh_cache.emplace(index, feature_detail::spfh(cloud, tree, index, cfg.fpfh_radius))
               .first;
    }
    return it->second;
  };

  std::vector<Descriptor> descriptors;
  descriptors.reserve(keypoints.size());
  for (const Vec3& kp : keypoints) {
    const int center = tree.nearest(kp);
    const Vec3& p = cloud.points[static_cast<std::size_t>(center)];
    Descriptor fpfh = spfh_of(center);

    const std::vector<int> nbrs = tree.radius_search(p, cfg.fpfh_radius);
    Descriptor neighbor_sum{};
    int count = 0;
    for (int j : nbrs) {
      if (j == center) continue;
      const double dist = (cloud.points[static_cast<std::size_t>(j)] - p).norm();
      if (dist < 1e-12) continue;
      const Descriptor& h = spfh_of(j);
      for (std::size_t b = 0; b < h.size(); ++b) neighbor_sum[b] += h[b] / dist;
      ++count;
    }
    if (count > 0) {
      for (std::size_t b = 0; b < fpfh.size(); ++b) {
        fpfh[b] += neighbor_sum[b] / static_cast<double>(count);
      }
    }
    double total = 0.0;
    for (double b : fpfh) total += b;
    if (total > 0.0) {
      for (double& b : fpfh) b /= total;
    }
    descriptors.push_back(fpfh);
  }
  return descriptors;
}

}  // namespace objdb
