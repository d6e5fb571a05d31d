#pragma once

// Directory persistence for the object database. Layout:
//
//   <dir>/database.json          index: format name, version, model count
//   <dir>/model_NNN/grid.tsdf    the model's TSDF grid (binary, bit-exact)
//   <dir>/model_NNN/cloud.ply    surface cloud with normals (binary PLY)
//   <dir>/model_NNN/features.txt keypoints + descriptors, documented text
//   <dir>/model_NNN/poses.txt    observed poses, documented text
//   <dir>/model_NNN/report.json  provenance and merge decisions
//
// features.txt:  line 1 "objdb-features 1"; line 2 the keypoint count; then
// one line per keypoint holding "x y z" followed by the 33 descriptor bins,
// all printed with %.17g so doubles round-trip exactly.
//
// poses.txt:  line 1 "objdb-poses 1"; line 2 the pose count; then one line
// per observation holding "session qw qx qy qz tx ty tz" (%.17g).
//
// Loading restores each model from its grid, poses, and report, then
// recomputes the derived surface cloud, keypoints, and descriptors from the
// grid — the grid round-trips bit-exactly and the derivation is
// deterministic, so a loaded database re-saves byte-identically. cloud.ply
// and features.txt are exports for downstream consumers and are not read
// back. Attached scene grids and the insertion log are not persisted.

#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "geometry.hpp"
#include "object_database.hpp"
#include "ply_io.hpp"
#include "tsdf_io.hpp"

namespace objdb {

namespace database_detail {

inline std::string format_double(double value) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.17g", value);
  return buffer;
}

inline std::string model_dir_name(int id) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "model_%03d", id);
  return buffer;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatabaseError("cannot open for writing: " + path.string());
  out << content;
  if (!out) throw DatabaseError("write failed: " + path.string());
}

inline nlohmann::json segment_ref_json(const SegmentRef& ref) {
  return nlohmann::json{{"label", ref.label}, {"session", ref.session}};
}

inline SegmentRef segment_ref_from_json(const nlohmann::json& j) {
  SegmentRef ref;
  ref.session = j.at("session").get<int>();
  ref.label = j.at("label").get<std::uint32_t>();
  return ref;
}

}  // namespace database_detail

inline void save_model_features(const ObjectModel& model, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "objdb-features 1\n" << model.keypoints.size() << "\n";
  for (std::size_t i = 0; i < model.keypoints.size(); ++i) {
    const Vec3& kp = model.keypoints[i];
    out << database_detail::format_double(kp.x()) << ' '
        << database_detail::format_double(kp.y()) << ' '
        << database_detail::format_double(kp.z());
    for (double bin : model.descriptors[i]) out << ' ' << database_detail::format_double(bin);
    out << '\n';
  }
  database_detail::write_text_file(path, out.str());
}

inline void save_model_poses(const ObjectModel& model, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "objdb-poses 1\n" << model.poses.size() << "\n";
  for (const ObservedPose& pose : model.poses) {
    const Eigen::Quaterniond& q = pose.world_from_model.rotation;
    const Vec3& t = pose.world_from_model.translation;
    out << pose.session;
    for (double v : {q.w(), q.x(), q.y(), q.z(), t.x(), t.y(), t.z()})
      out << ' ' << database_detail::format_double(v);
    out << '\n';
  }
  database_detail::write_text_file(path, out.str());
}

inline std::vector<ObservedPose> load_model_poses(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatabaseError("cannot open: " + path.string());
  std::string magic;
  int version = 0;
  std::size_t count = 0;
  in >> magic >> version >> count;
  if (!in || magic != "objdb-poses" || version != 1)
    throw DatabaseError("not a poses file: " + path.string());
  std::vector<ObservedPose> poses;
  poses.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    ObservedPose pose;
    double qw = 0, qx = 0, qy = 0, qz = 0, tx = 0, ty = 0, tz = 0;
    in >> pose.session >> qw >> qx >> qy >> qz >> tx >> ty >> tz;
    if (!in) throw DatabaseError("truncated poses file: " + path.string());
    pose.world_from_model.rotation = Eigen::Quaterniond(qw, qx, qy, qz);
    pose.world_from_model.translation = Vec3(tx, ty, tz);
    poses.push_back(pose);
  }
  return poses;
}

inline nlohmann::json model_report_json(const ObjectModel& model) {
  nlohmann::json merged_from = nlohmann::json::array();
  for (const SegmentRef& ref : model.merged_from)
    merged_from.push_back(database_detail::segment_ref_json(ref));

  nlohmann::json merges = nlohmann::json::array();
  for (const MergeRecord& record : model.merge_history) {
    nlohmann::json scene_checks = nlohmann::json::array();
    for (const SceneCheckRecord& check : record.scene_checks) {
      scene_checks.push_back(nlohmann::json{{"overlap", check.overlap},
                                            {"passed", check.passed},
                                            {"rmse", check.rmse},
                                            {"session", check.session}});
    }
    merges.push_back(nlohmann::json{{"e_tsdf", record.e_tsdf},
                                    {"icp_rmse", record.icp_rmse},
                                    {"o_required", record.o_required},
                                    {"o_tsdf", record.o_tsdf},
                                    {"scene_checks", scene_checks},
                                    {"segment", database_detail::segment_ref_json(record.segment)}});
  }

  return nlohmann::json{{"id", model.id},
                        {"merged_from", merged_from},
                        {"merges", merges},
                        {"observations", model.poses.size()},
                        {"planar", model.planar}};
}

inline void load_model_report(const std::filesystem::path& path, ObjectModel& model) {
  std::ifstream in(path);
  if (!in) throw DatabaseError("cannot open: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    model.merged_from.clear();
    for (const nlohmann::json& ref : j.at("merged_from"))
      model.merged_from.push_back(database_detail::segment_ref_from_json(ref));
    model.merge_history.clear();
    for (const nlohmann::json& merge : j.at("merges")) {
      MergeRecord record;
      record.segment = database_detail::segment_ref_from_json(merge.at("segment"));
      record.icp_rmse = merge.at("icp_rmse").get<double>();
      record.e_tsdf = merge.at("e_tsdf").get<double>();
      record.o_tsdf = merge.at("o_tsdf").get<std::uint64_t>();
      record.o_required = merge.at("o_required").get<std::uint64_t>();
      for (const nlohmann::json& check : merge.at("scene_checks")) {
        record.scene_checks.push_back({check.at("session").get<int>(),
                                       check.at("rmse").get<double>(),
                                       check.at("overlap").get<std::uint64_t>(),
                                       check.at("passed").get<bool>()});
      }
      model.merge_history.push_back(std::move(record));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DatabaseError("malformed report " + path.string() + ": " + e.what());
  }
}

inline void save_database(const ObjectDatabase& db, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);

  const nlohmann::json index{{"format", "objdb-database"},
                             {"model_count", db.models().size()},
                             {"version", 1}};
  database_detail::write_text_file(dir / "database.json", index.dump(2) + "\n");

  for (const ObjectModel& model : db.models()) {
    const std::filesystem::path model_dir = dir / database_detail::model_dir_name(model.id);
    std::filesystem::create_directories(model_dir);
    write_tsdf(model.tsdf, model_dir / "grid.tsdf");
    write_ply(to_ply(model.cloud), (model_dir / "cloud.ply").string());
    save_model_features(model, model_dir / "features.txt");
    save_model_poses(model, model_dir / "poses.txt");
    database_detail::write_text_file(model_dir / "report.json",
                                     model_report_json(model).dump(2) + "\n");
  }

  // Drop leftover model directories from an earlier, larger save so the
  // directory always mirrors exactly this database.
  for (int id = static_cast<int>(db.models().size());; ++id) {
    const std::filesystem::path stale = dir / database_detail::model_dir_name(id);
    if (!std::filesystem::exists(stale)) break;
    std::filesystem::remove_all(stale);
  }
}

inline ObjectDatabase load_database(const std::filesystem::path& dir,
                                    const DatabaseConfig& cfg = {}) {
  const std::filesystem::path index_path = dir / "database.json";
  std::ifstream in(index_path);
  if (!in) throw DatabaseError("cannot open: " + index_path.string());
  std::size_t count = 0;
  try {
    nlohmann::json index;
    in >> index;
    if (index.at("format").get<std::string>() != "objdb-database" ||
        index.at("version").get<int>() != 1) {
      throw DatabaseError("unsupported database format: " + index_path.string());
    }
    count = index.at("model_count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DatabaseError("malformed index " + index_path.string() + ": " + e.what());
  }

  ObjectDatabase db(cfg);
  for (std::size_t id = 0; id < count; ++id) {
    const std::filesystem::path model_dir =
        dir / database_detail::model_dir_name(static_cast<int>(id));
    ObjectModel model;
    model.id = static_cast<int>(id);
    model.tsdf = read_tsdf(model_dir / "grid.tsdf");
    model.poses = load_model_poses(model_dir / "poses.txt");
    load_model_report(model_dir / "report.json", model);
    refresh_derived_data(model, cfg);
    db.adopt_model(std::move(model));
  }
  return db;
}

}  // namespace objdb
