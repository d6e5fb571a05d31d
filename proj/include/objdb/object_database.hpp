#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "features.hpp"
#include "geometry.hpp"
#include "gsm.hpp"
#include "marching_cubes.hpp"
#include "registration.hpp"
#include "tsdf_grid.hpp"

namespace objdb {

struct DatabaseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Identity of a raw segment: the session it was extracted from plus its
// persistent label inside that session's scene map.
struct SegmentRef {
  int session = 0;
  std::uint32_t label = 0;

  friend bool operator==(const SegmentRef& a, const SegmentRef& b) {
    return a.session == b.session && a.label == b.label;
  }
};

// One observed placement of a model: the rigid transform from the model's
// base frame into the world of the session where the observation was made.
struct ObservedPose {
  RigidTransform world_from_model;
  int session = 0;
};

// Result of one TSDF consistency check: distance RMSE over the co-observed
// voxels, the size of that overlap, and the thresholds that were applied.
struct TsdfVerification {
  double rmse = std::numeric_limits<double>::infinity();
  std::uint64_t overlap = 0;
  double rmse_limit = 0.0;
  std::uint64_t overlap_required = 0;
  bool passed = false;
};

struct SceneCheckRecord {
  int session = 0;
  double rmse = std::numeric_limits<double>::infinity();
  std::uint64_t overlap = 0;
  bool passed = false;
};

// Gate values of one committed merge, kept as model provenance.
struct MergeRecord {
  SegmentRef segment;
  double icp_rmse = 0.0;
  double e_tsdf = 0.0;         // model-to-model RMSE of the committed merge
  std::uint64_t o_tsdf = 0;    // model-to-model overlap
  std::uint64_t o_required = 0;
  std::vector<SceneCheckRecord> scene_checks;
};

struct ObjectModel {
  int id = -1;
  std::vector<ObservedPose> poses;  // first entry is the founding observation,
                                    // whose segment frame is the base frame
  TsdfGrid tsdf;                    // base frame
  PointCloud cloud;                 // derived from tsdf
  std::vector<Vec3> keypoints;
  std::vector<Descriptor> descriptors;
  bool planar = false;
  std::vector<SegmentRef> merged_from;  // founding segment first
  std::vector<MergeRecord> merge_history;
};

// The minimum-overlap threshold counts voxels, so it scales with resolution:
// the configured value is calibrated at this voxel size and is rescaled by
// the voxel-volume ratio when grids run at a different resolution. The
// rescaling is reported in every verification result, never applied silently.
inline constexpr double kOverlapReferenceVoxelSize = 0.01;

inline std::uint64_t effective_overlap_min(const DatabaseConfig& cfg, double voxel_size) {
  if (voxel_size <= 0.0) throw DatabaseError("effective_overlap_min: voxel_size must be positive");
  const double scale = std::pow(kOverlapReferenceVoxelSize / voxel_size, 3.0);
  const double required = cfg.tsdf_overlap_min * scale;
  return static_cast<std::uint64_t>(std::llround(required));
}

// Applies the RMSE and overlap gates to two grids already expressed on the
// same lattice. `aligned` is the transformed newcomer, `reference` the grid
// it is judged against.
inline TsdfVerification tsdf_consistency_check(const TsdfGrid& aligned, const TsdfGrid& reference,
                                               const DatabaseConfig& cfg = {}) {
  TsdfVerification v;
  const TsdfComparison cmp = tsdf_rmse_and_overlap(aligned, reference);
  v.rmse = cmp.rmse;
  v.overlap = cmp.overlap;
  v.rmse_limit = cfg.tsdf_rmse_threshold;
  v.overlap_required = effective_overlap_min(cfg, reference.voxel_size());
  v.passed = v.overlap >= v.overlap_required && v.rmse <= v.rmse_limit;
  return v;
}

// First verification stage: resample the source grid through the registered
// transform onto the target's lattice and gate on RMSE and overlap.
inline TsdfVerification verify_model_to_model(const TsdfGrid& source,
                                              const RigidTransform& target_from_source,
                                              const TsdfGrid& target,
                                              const DatabaseConfig& cfg = {}) {
  return tsdf_consistency_check(transform_grid(source, target_from_source, target.layout()),
                                target, cfg);
}

// Second verification stage: place a (merged) model grid at one observed pose
// and gate it against that session's scene grid.
inline TsdfVerification verify_model_to_scene(const TsdfGrid& model,
                                              const RigidTransform& world_from_model,
                                              const TsdfGrid& scene,
                                              const DatabaseConfig& cfg = {}) {
  return tsdf_consistency_check(transform_grid(model, world_from_model, scene.layout()), scene,
                                cfg);
}

namespace database_detail {

// Deterministic RANSAC seed for a (segment, model) evaluation pair, so a
// rerun reproduces every registration bit for bit.
inline std::uint64_t pair_seed(const SegmentRef& segment, int model_id) {
  std::uint64_t h = 0x9E3779B97F4A7C15ull;
  const auto mix = [&h](std::uint64_t v) {
    h ^= v + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
  };
  mix(static_cast<std::uint64_t>(static_cast<std::int64_t>(segment.session)));
  mix(segment.label);
  mix(static_cast<std::uint64_t>(static_cast<std::int64_t>(model_id)));
  return h;
}

}  // namespace database_detail

// Regenerates everything derived from the model's TSDF grid: surface cloud,
// planarity flag, keypoints, and descriptors. Called on construction and
// after every merge.
inline void refresh_derived_data(ObjectModel& model, const DatabaseConfig& cfg = {}) {
  SurfaceMesh mesh = extract_surface(model.tsdf);
  model.cloud = std::move(mesh.cloud);
  if (model.cloud.size() < 3) {
    throw DatabaseError("segment surface is degenerate (" +
                        std::to_string(model.cloud.size()) + " surface points)");
  }
  model.planar = planarity_check(model.cloud, cfg);
  model.keypoints.clear();
  model.descriptors.clear();
  if (!model.planar) {
    model.keypoints = detect_keypoints(model.cloud, model.tsdf.voxel_size(), cfg);
    model.descriptors = describe_keypoints(model.cloud, model.keypoints, cfg);
  }
}

// Builds a fresh model from a raw segment. Throws DatabaseError if the
// segment has no usable surface; the database reports such segments as
// rejected instead of storing them.
inline ObjectModel build_object_model(const RawSegment& segment, const DatabaseConfig& cfg = {}) {
  ObjectModel model;
  model.tsdf = segment.tsdf;
  model.poses = {{segment.pose, segment.source_session}};
  model.merged_from = {{segment.source_session, segment.label}};
  refresh_derived_data(model, cfg);
  return model;
}

// Diagnostics for one candidate model considered during an insertion.
struct CandidateReport {
  int model_id = -1;
  bool registered = false;  // registration produced an accepted transform
  double icp_rmse = std::numeric_limits<double>::infinity();
  TsdfVerification model_to_model;
  std::vector<SceneCheckRecord> scene_checks;
  bool survived = false;  // passed both verification stages
};

struct InsertionReport {
  enum class Outcome { rejected, new_model, merged };
  Outcome outcome = Outcome::rejected;
  std::string reason;  // filled for rejections
  SegmentRef segment;
  int model_id = -1;  // id stored into (new) or merged into
  bool planar = false;
  std::vector<CandidateReport> candidates;
};

// Incremental model store. Raw segments are matched against the existing
// non-planar models by descriptor registration; surviving candidates are
// verified model-to-model and model-to-scene on their TSDF grids, and the
// newcomer is merged into the best-fitting model or stored as a new one.
//
// Scene grids are attached per session and are only referenced, not copied;
// the caller keeps them alive while insertions are running. Candidate
// evaluation is read-only and runs on `thread_count` workers; commits are
// serialized within insert_segment.
class ObjectDatabase {
 public:
  explicit ObjectDatabase(const DatabaseConfig& config = {}) : config_(config) {}

  const DatabaseConfig& config() const { return config_; }
  const std::vector<ObjectModel>& models() const { return models_; }
  const std::vector<InsertionReport>& insertion_log() const { return insertion_log_; }

  const ObjectModel& model(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= models_.size())
      throw DatabaseError("no model with id " + std::to_string(id));
    return models_[static_cast<std::size_t>(id)];
  }

  void attach_scene(int session_id, const TsdfGrid* scene) {
    if (!scene) throw DatabaseError("attach_scene: null scene grid");
    scenes_[session_id] = scene;
  }

  const TsdfGrid& scene(int session_id) const {
    const auto it = scenes_.find(session_id);
    if (it == scenes_.end()) {
      throw DatabaseError("no scene grid attached for session " + std::to_string(session_id));
    }
    return *it->second;
  }

  int thread_count() const { return thread_count_; }
  void set_thread_count(int count) {
    thread_count_ = std::max(1, count);
  }

  // Restores a previously stored model (used when loading a database from
  // disk). Models must arrive in id order.
  void adopt_model(ObjectModel model) {
    if (model.id != static_cast<int>(models_.size())) {
      throw DatabaseError("adopt_model: expected id " + std::to_string(models_.size()) +
                          ", got " + std::to_string(model.id));
    }
    models_.push_back(std::move(model));
  }

  InsertionReport insert_segment(const RawSegment& segment) {
    InsertionReport report;
    report.segment = {segment.source_session, segment.label};

    ObjectModel incoming;
    try {
      incoming = build_object_model(segment, config_);
    } catch (const DatabaseError& e) {
      report.outcome = InsertionReport::Outcome::rejected;
      report.reason = e.what();
      insertion_log_.push_back(report);
      return report;
    } catch (const FeatureError& e) {
      report.outcome = InsertionReport::Outcome::rejected;
      report.reason = e.what();
      insertion_log_.push_back(report);
      return report;
    }
    report.planar = incoming.planar;

    std::optional<std::size_t> winner;
    std::vector<Evaluation> evaluations;
    if (!incoming.planar) {
      evaluations = evaluate_candidates(incoming, report.segment);
      for (const Evaluation& ev : evaluations) report.candidates.push_back(ev.report);
      double best_rmse = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < evaluations.size(); ++k) {
        if (!evaluations[k].report.survived) continue;
        if (evaluations[k].report.model_to_model.rmse < best_rmse) {
          best_rmse = evaluations[k].report.model_to_model.rmse;
          winner = k;
        }
      }
    }

    if (winner) {
      Evaluation& ev = evaluations[*winner];
      ObjectModel& target = models_[static_cast<std::size_t>(ev.report.model_id)];
      target.tsdf = std::move(ev.merged);
      target.poses.push_back(ev.incoming_pose);
      target.merged_from.push_back(report.segment);
      target.merge_history.push_back({report.segment, ev.report.icp_rmse,
                                      ev.report.model_to_model.rmse,
                                      ev.report.model_to_model.overlap,
                                      ev.report.model_to_model.overlap_required,
                                      ev.report.scene_checks});
      refresh_derived_data(target, config_);
      report.outcome = InsertionReport::Outcome::merged;
      report.model_id = target.id;
    } else {
      incoming.id = static_cast<int>(models_.size());
      report.outcome = InsertionReport::Outcome::new_model;
      report.model_id = incoming.id;
      models_.push_back(std::move(incoming));
    }
    insertion_log_.push_back(report);
    return report;
  }

 private:
  struct Evaluation {
    CandidateReport report;
    TsdfGrid merged;             // valid iff report.survived
    ObservedPose incoming_pose;  // the newcomer's placement in the candidate's base frame terms
  };

  // Read-only evaluation of one candidate model: register, verify
  // model-to-model, tentatively merge, verify model-to-scene at every
  // observed pose of either participant.
  Evaluation evaluate_candidate(const ObjectModel& incoming, const SegmentRef& segment,
                                const ObjectModel& candidate) const {
    Evaluation ev;
    ev.report.model_id = candidate.id;

    const std::optional<RegistrationResult> reg = register_models(
        incoming.cloud, incoming.keypoints, incoming.descriptors, candidate.cloud,
        candidate.keypoints, candidate.descriptors, config_,
        database_detail::pair_seed(segment, candidate.id));
    if (!reg) return ev;
    ev.report.registered = true;
    ev.report.icp_rmse = reg->icp_rmse;

    const TsdfGrid resampled =
        transform_grid(incoming.tsdf, reg->t_final, candidate.tsdf.layout());
    ev.report.model_to_model = tsdf_consistency_check(resampled, candidate.tsdf, config_);
    if (!ev.report.model_to_model.passed) return ev;

    TsdfGrid merged = merge_grids(candidate.tsdf, resampled);

    // The newcomer was observed at incoming.poses[0]; expressed in the
    // candidate's base frame that observation sits at pose ∘ T_final⁻¹.
    ev.incoming_pose = {incoming.poses.front().world_from_model * reg->t_final.inverse(),
                        incoming.poses.front().session};
    std::vector<ObservedPose> all_poses;
    all_poses.push_back(ev.incoming_pose);
    all_poses.insert(all_poses.end(), candidate.poses.begin(), candidate.poses.end());

    for (const ObservedPose& pose : all_poses) {
      const TsdfVerification v =
          verify_model_to_scene(merged, pose.world_from_model, scene(pose.session), config_);
      ev.report.scene_checks.push_back({pose.session, v.rmse, v.overlap, v.passed});
      if (!v.passed) return ev;
    }

    ev.report.survived = true;
    ev.merged = std::move(merged);
    return ev;
  }

  std::vector<Evaluation> evaluate_candidates(const ObjectModel& incoming,
                                              const SegmentRef& segment) const {
    std::vector<int> candidate_ids;
    for (const ObjectModel& m : models_) {
      if (!m.planar) candidate_ids.push_back(m.id);
    }
    std::vector<Evaluation> evaluations(candidate_ids.size());
    std::vector<std::exception_ptr> errors(candidate_ids.size());
    const auto run = [&](std::size_t k) {
      try {
        evaluations[k] =
            evaluate_candidate(incoming, segment, models_[static_cast<std::size_t>(candidate_ids[k])]);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    };

    const int workers =
        std::min<int>(thread_count_, static_cast<int>(candidate_ids.size()));
    if (workers > 1) {
      std::atomic<std::size_t> next{0};
      std::vector<std::thread> pool;
      pool.reserve(static_cast<std::size_t>(workers));
      for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&]() {
          for (std::size_t k = next.fetch_add(1); k < evaluations.size(); k = next.fetch_add(1))
            run(k);
        });
      }
      for (std::thread& t : pool) t.join();
    } else {
      for (std::size_t k = 0; k < evaluations.size(); ++k) run(k);
    }

    for (const std::exception_ptr& error : errors) {
      if (error) std::rethrow_exception(error);
    }
    return evaluations;
  }

  DatabaseConfig config_;
  std::vector<ObjectModel> models_;
  std::map<int, const TsdfGrid*> scenes_;
  std::vector<InsertionReport> insertion_log_;
  int thread_count_ = 1;
};

}  // namespace objdb
