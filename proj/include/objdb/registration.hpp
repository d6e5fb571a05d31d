#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "features.hpp"
#include "geometry.hpp"
#include "kdtree.hpp"

namespace objdb {

// One keypoint-to-keypoint candidate: indices into the source and target
// keypoint arrays plus the descriptor similarity that produced it.
struct Correspondence {
  int source = -1;
  int target = -1;
  double similarity = 0.0;
};

struct RegistrationResult {
  RigidTransform t_coarse;  // RANSAC estimate, maps source frame -> target frame
  RigidTransform t_fine;    // ICP refinement applied after t_coarse
  RigidTransform t_final;   // t_fine * t_coarse
  std::vector<Correspondence> inlier_matches;
  double icp_rmse = std::numeric_limits<double>::infinity();  // final correspondence RMSE (m)
};

namespace registration_detail {

using DescriptorPoint = Eigen::Matrix<double, kDescriptorBins, 1>;

inline DescriptorPoint to_point(const Descriptor& d) {
  DescriptorPoint p;
  for (int i = 0; i < kDescriptorBins; ++i) p[i] = d[static_cast<std::size_t>(i)];
  return p;
}

// Median intra-set neighbor distance: the length scale that makes the
// similarity score dimensionless. The neighbor depth matches the matcher's
// k, because repeated local geometry (congruent corners of one object) puts
// descriptor twins at near-zero first-neighbor distance; the k-th neighbor
// spans the set's genuinely distinct features, which is the spacing the
// similarity gate has to discriminate against. Floors at 1e-9 so
// duplicate-only sets cannot divide by zero.
inline double median_neighbor_distance(const std::vector<DescriptorPoint>& points, int k) {
  if (points.size() < 2) return 1e-9;
  const int depth = std::min<int>(std::max(1, k), static_cast<int>(points.size()) - 1);
  const KdTree<kDescriptorBins> tree(points);
  std::vector<double> spans;
  spans.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto hits = tree.knn(points[i], depth + 1);  // first hit is the point itself
    spans.push_back(hits.back().second);
  }
  std::nth_element(spans.begin(), spans.begin() + spans.size() / 2, spans.end());
  return std::max(spans[spans.size() / 2], 1e-9);
}

}  // namespace registration_detail

// Descriptor similarity in [0, 1]: exact matches score 1 and the score halves
// at one median intra-set neighbor distance.
inline double descriptor_similarity(double l2_distance, double length_scale) {
  return 1.0 / (1.0 + l2_distance / std::max(length_scale, 1e-9));
}

// For every source keypoint: its best k nearest target descriptors with
// similarity at or above the threshold. Ordered by source index, then by
// ascending descriptor distance.
inline std::vector<Correspondence> match_descriptors(const std::vector<Descriptor>& source,
                                                     const std::vector<Descriptor>& target,
                                                     const DatabaseConfig& cfg = {}) {
  std::vector<Correspondence> matches;
  if (source.empty() || target.empty()) return matches;

  std::vector<registration_detail::DescriptorPoint> source_points;
  source_points.reserve(source.size());
  for (const Descriptor& d : source) source_points.push_back(registration_detail::to_point(d));
  std::vector<registration_detail::DescriptorPoint> target_points;
  target_points.reserve(target.size());
  for (const Descriptor& d : target) target_points.push_back(registration_detail::to_point(d));

  const double scale =
      registration_detail::median_neighbor_distance(source_points, cfg.match_knn);
  const KdTree<kDescriptorBins> tree(target_points);
  for (std::size_t i = 0; i < source_points.size(); ++i) {
    for (const auto& [index, distance] : tree.knn(source_points[i], cfg.match_knn)) {
      const double similarity = descriptor_similarity(distance, scale);
      if (similarity >= cfg.similarity_threshold) {
        matches.push_back({static_cast<int>(i), index, similarity});
      }
    }
  }
  return matches;
}

namespace registration_detail {

inline RigidTransform rigid_from_umeyama(const Eigen::Matrix3Xd& src, const Eigen::Matrix3Xd& dst) {
  const Eigen::Matrix4d m = Eigen::umeyama(src, dst, /*with_scaling=*/false);
  return RigidTransform::from_parts(Eigen::Quaterniond(Mat3(m.topLeftCorner<3, 3>())),
                                    Vec3(m.topRightCorner<3, 1>()));
}

inline int count_inliers(const std::vector<Vec3>& source_kp, const std::vector<Vec3>& target_kp,
                         const std::vector<Correspondence>& matches, const RigidTransform& t,
                         double max_distance, std::vector<int>* inliers,
                         double* rmse_out = nullptr) {
  if (inliers) inliers->clear();
  int count = 0;
  double sum_sq = 0.0;
  for (std::size_t m = 0; m < matches.size(); ++m) {
    const Vec3 mapped = t * source_kp[static_cast<std::size_t>(matches[m].source)];
    const double distance =
        (mapped - target_kp[static_cast<std::size_t>(matches[m].target)]).norm();
    if (distance <= max_distance) {
      ++count;
      sum_sq += distance * distance;
      if (inliers) inliers->push_back(static_cast<int>(m));
    }
  }
  if (rmse_out) {
    *rmse_out = count > 0 ? std::sqrt(sum_sq / count) : std::numeric_limits<double>::infinity();
  }
  return count;
}

// One matured hypothesis: the transform, its consensus size, and the RMSE
// over that consensus. Hypotheses are ranked by count, ties by lower RMSE:
// an alignment that only reaches a given consensus by stretching residuals
// to the tolerance edge loses to one that fits the same number cleanly.
struct RansacHypothesis {
  RigidTransform t;
  int count = 0;
  double rmse = std::numeric_limits<double>::infinity();

  bool better_than(const RansacHypothesis& other) const {
    if (count != other.count) return count > other.count;
    return rmse < other.rmse;
  }
};

// Local optimization of one hypothesis: refit on the current inlier set and
// recount, repeating while the consensus grows or, at equal size, while the
// fit tightens (plateau steps let a jittery sample slide into the basin of a
// larger consensus). Maturing every promising sample makes hypothesis
// comparison meaningful: a lucky sample transform whose raw count is padded
// by borderline matches no longer outranks a better-supported alignment
// whose sample was merely jittery.
inline RansacHypothesis locally_optimize(const std::vector<Vec3>& source_kp,
                                         const std::vector<Vec3>& target_kp,
                                         const std::vector<Correspondence>& matches,
                                         const RigidTransform& t0, double max_distance) {
  RansacHypothesis current{t0, 0, std::numeric_limits<double>::infinity()};
  std::vector<int> inliers;
  current.count =
      count_inliers(source_kp, target_kp, matches, t0, max_distance, &inliers, &current.rmse);
  for (int round = 0; round < 20; ++round) {
    if (inliers.size() < 3) break;
    Eigen::Matrix3Xd src(3, static_cast<Eigen::Index>(inliers.size()));
    Eigen::Matrix3Xd dst(3, static_cast<Eigen::Index>(inliers.size()));
    for (std::size_t i = 0; i < inliers.size(); ++i) {
      const Correspondence& m = matches[static_cast<std::size_t>(inliers[i])];
      src.col(static_cast<Eigen::Index>(i)) = source_kp[static_cast<std::size_t>(m.source)];
      dst.col(static_cast<Eigen::Index>(i)) = target_kp[static_cast<std::size_t>(m.target)];
    }
    RansacHypothesis refined;
    refined.t = rigid_from_umeyama(src, dst);
    std::vector<int> refined_inliers;
    refined.count = count_inliers(source_kp, target_kp, matches, refined.t, max_distance,
                                  &refined_inliers, &refined.rmse);
    if (!refined.better_than(current)) break;
    current = refined;
    inliers = std::move(refined_inliers);
  }
  return current;
}

}  // namespace registration_detail

// Seeded RANSAC over correspondence triples. Returns the refined rigid
// transform (source frame -> target frame) and the inlying match indices, or
// nothing when no sample reaches the inlier quorum.
inline std::optional<RigidTransform> ransac_alignment(const std::vector<Vec3>& source_kp,
                                                      const std::vector<Vec3>& target_kp,
                                                      const std::vector<Correspondence>& matches,
                                                      const DatabaseConfig& cfg = {},
                                                      std::uint64_t seed = 0,
                                                      std::vector<int>* inliers_out = nullptr) {
  if (matches.size() < 3) return std::nullopt;
  std::mt19937_64 rng(seed);

  // Samples are drawn proportionally to match similarity, so the iteration
  // budget concentrates on the credible correspondences instead of spending
  // most triples on gate-grazing ones. Implemented as inverse-CDF sampling
  // over a prefix-sum table to keep the draw sequence portable.
  std::vector<double> cumulative(matches.size());
  double running = 0.0;
  for (std::size_t m = 0; m < matches.size(); ++m) {
    running += std::max(matches[m].similarity, 1e-12);
    cumulative[m] = running;
  }
  std::uniform_real_distribution<double> unit(0.0, running);
  const auto pick = [&]() -> std::size_t {
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), unit(rng));
    return static_cast<std::size_t>(std::min<std::ptrdiff_t>(
        it - cumulative.begin(), static_cast<std::ptrdiff_t>(cumulative.size()) - 1));
  };

  registration_detail::RansacHypothesis best;
  Eigen::Matrix3Xd src(3, 3), dst(3, 3);
  for (int it = 0; it < cfg.ransac_iterations; ++it) {
    const std::size_t a = pick();
    const std::size_t b = pick();
    const std::size_t c = pick();
    if (a == b || a == c || b == c) continue;

    bool degenerate = false;
    const std::size_t sample[3] = {a, b, c};
    for (int u = 0; u < 3 && !degenerate; ++u) {
      for (int v = u + 1; v < 3; ++v) {
        const Vec3& su = source_kp[static_cast<std::size_t>(matches[sample[u]].source)];
        const Vec3& sv = source_kp[static_cast<std::size_t>(matches[sample[v]].source)];
        const Vec3& tu = target_kp[static_cast<std::size_t>(matches[sample[u]].target)];
        const Vec3& tv = target_kp[static_cast<std::size_t>(matches[sample[v]].target)];
        const double ds = (su - sv).norm();
        const double dt = (tu - tv).norm();
        // Rigidity pre-check: a rigid map preserves pairwise distances.
        if (ds < 1e-6 || std::abs(ds - dt) > 2.0 * cfg.ransac_inlier_distance) {
          degenerate = true;
          break;
        }
      }
    }
    if (degenerate) continue;

    for (int u = 0; u < 3; ++u) {
      src.col(u) = source_kp[static_cast<std::size_t>(matches[sample[u]].source)];
      dst.col(u) = target_kp[static_cast<std::size_t>(matches[sample[u]].target)];
    }
    const RigidTransform t = registration_detail::rigid_from_umeyama(src, dst);
    const int count = registration_detail::count_inliers(source_kp, target_kp, matches, t,
                                                         cfg.ransac_inlier_distance, nullptr);
    // Mature every sample with any independent support (a fourth consistent
    // match beyond the defining triple): a sample built from exact repeated-
    // structure correspondences can out-count a jittery sample of the true
    // alignment before refitting, so hypotheses are only compared after
    // local optimization.
    if (count >= 4) {
      const registration_detail::RansacHypothesis optimized = registration_detail::locally_optimize(
          source_kp, target_kp, matches, t, cfg.ransac_inlier_distance);
      if (optimized.better_than(best)) best = optimized;
    }
  }
  if (best.count < cfg.ransac_min_inliers) return std::nullopt;

  // Local optimization already refit the winner on its full inlier set; one
  // final count recovers that set for the caller.
  if (inliers_out) {
    registration_detail::count_inliers(source_kp, target_kp, matches, best.t,
                                       cfg.ransac_inlier_distance, inliers_out);
  }
  return best.t;
}

struct IcpResult {
  RigidTransform t_fine;  // incremental correction applied after the initial guess
  double rmse = std::numeric_limits<double>::infinity();  // Euclidean RMSE (m)
  int iterations = 0;
  int correspondences = 0;
};

// Point-to-plane ICP of `source` points onto `target` (which must carry
// normals), starting from `initial` (source frame -> target frame). The
// returned correction satisfies: refined map = t_fine * initial.
inline IcpResult icp_point_to_plane(const std::vector<Vec3>& source_points,
                                    const PointCloud& target, const KdTree3& target_tree,
                                    const RigidTransform& initial,
                                    const DatabaseConfig& cfg = {}) {
  if (!target.has_normals()) throw FeatureError("icp_point_to_plane: target normals required");
  IcpResult result;
  if (source_points.empty() || target.empty()) return result;

  // Deterministic stride subsample of the source.
  std::vector<Vec3> moved;
  const std::size_t stride =
      source_points.size() > static_cast<std::size_t>(cfg.icp_max_points)
          ? (source_points.size() + static_cast<std::size_t>(cfg.icp_max_points) - 1) /
                static_cast<std::size_t>(cfg.icp_max_points)
          : 1;
  for (std::size_t i = 0; i < source_points.size(); i += stride) {
    moved.push_back(initial * source_points[i]);
  }

  RigidTransform accumulated;  // identity
  for (int iter = 0; iter < cfg.icp_max_iterations; ++iter) {
    result.iterations = iter + 1;
    Eigen::Matrix<double, 6, 6> ata = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> atb = Eigen::Matrix<double, 6, 1>::Zero();
    int used = 0;
    for (const Vec3& p : moved) {
      const int j = target_tree.nearest(p);
      if (j < 0) continue;
      const Vec3& q = target.points[static_cast<std::size_t>(j)];
      if ((p - q).norm() > cfg.icp_correspondence_cutoff) continue;
      Vec3 n = target.normals[static_cast<std::size_t>(j)];
      const double n_norm = n.norm();
      if (n_norm < 1e-12) continue;
      n /= n_norm;
      const double residual = n.dot(p - q);
      Eigen::Matrix<double, 6, 1> jac;
      jac.head<3>() = p.cross(n);
      jac.tail<3>() = n;
      ata += jac * jac.transpose();
      atb += jac * residual;
      ++used;
    }
    if (used < 6) break;
    const Eigen::Matrix<double, 6, 1> x = ata.ldlt().solve(-atb);
    if (!x.allFinite()) break;

    const Vec3 omega = x.head<3>();
    const double angle = omega.norm();
    const Eigen::Quaterniond dq =
        angle < 1e-15 ? Eigen::Quaterniond::Identity()
                      : Eigen::Quaterniond(Eigen::AngleAxisd(angle, omega / angle));
    const RigidTransform delta = RigidTransform::from_parts(dq, x.tail<3>());
    for (Vec3& p : moved) p = delta * p;
    accumulated = delta * accumulated;
    if (x.norm() < cfg.icp_convergence_delta) break;
  }

  // Final correspondence pass: Euclidean RMSE within the cutoff.
  double sum_sq = 0.0;
  int used = 0;
  for (const Vec3& p : moved) {
    const int j = target_tree.nearest(p);
    if (j < 0) continue;
    const double d = (p - target.points[static_cast<std::size_t>(j)]).norm();
    if (d > cfg.icp_correspondence_cutoff) continue;
    sum_sq += d * d;
    ++used;
  }
  result.t_fine = accumulated;
  result.correspondences = used;
  if (used > 0) result.rmse = std::sqrt(sum_sq / used);
  return result;
}

// Full registration of one model onto another: descriptor matching, RANSAC
// coarse alignment over the keypoints, point-to-plane ICP refinement over the
// clouds, gated on the final RMSE. Absent result = rejection (no consistent
// match set, or refinement error above threshold).
inline std::optional<RegistrationResult> register_models(
    const PointCloud& source_cloud, const std::vector<Vec3>& source_keypoints,
    const std::vector<Descriptor>& source_descriptors, const PointCloud& target_cloud,
    const std::vector<Vec3>& target_keypoints, const std::vector<Descriptor>& target_descriptors,
    const DatabaseConfig& cfg = {}, std::uint64_t seed = 0) {
  const std::vector<Correspondence> matches =
      match_descriptors(source_descriptors, target_descriptors, cfg);
  std::vector<int> inliers;
  const std::optional<RigidTransform> coarse =
      ransac_alignment(source_keypoints, target_keypoints, matches, cfg, seed, &inliers);
  if (!coarse) return std::nullopt;

  const KdTree3 target_tree(target_cloud.points);
  const IcpResult icp =
      icp_point_to_plane(source_cloud.points, target_cloud, target_tree, *coarse, cfg);
  if (icp.rmse > cfg.icp_rmse_threshold) return std::nullopt;

  RegistrationResult result;
  result.t_coarse = *coarse;
  result.t_fine = icp.t_fine;
  result.t_final = icp.t_fine * result.t_coarse;
  result.inlier_matches.reserve(inliers.size());
  for (int m : inliers) result.inlier_matches.push_back(matches[static_cast<std::size_t>(m)]);
  result.icp_rmse = icp.rmse;
  return result;
}

}  // namespace objdb
