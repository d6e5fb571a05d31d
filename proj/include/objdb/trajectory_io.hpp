#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "objdb/geometry.hpp"
#include "objdb/image.hpp"
#include "objdb/pgm_io.hpp"  // IoError

namespace objdb {

// Camera calibration plus per-frame world <- camera poses. Text layout:
//   # objdb-trajectory v1
//   intrinsics <fx> <fy> <cx> <cy> <width> <height>
//   <frame_id> <tx> <ty> <tz> <qx> <qy> <qz> <qw>
struct Trajectory {
  CameraIntrinsics intrinsics;
  int width = 0;
  int height = 0;
  std::vector<std::pair<int, RigidTransform>> frames;  // sorted by frame id

  const RigidTransform* pose_of(int frame_id) const {
    for (const auto& [id, pose] : frames)
      if (id == frame_id) return &pose;
    return nullptr;
  }
};

inline void write_trajectory(const Trajectory& traj, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "# objdb-trajectory v1\n";
  out.precision(17);
  out << "intrinsics " << traj.intrinsics.fx << " " << traj.intrinsics.fy << " "
      << traj.intrinsics.cx << " " << traj.intrinsics.cy << " " << traj.width << " "
      << traj.height << "\n";
  for (const auto& [id, pose] : traj.frames) {
    const auto& q = pose.rotation;
    out << id << " " << pose.translation.x() << " " << pose.translation.y() << " "
        << pose.translation.z() << " " << q.x() << " " << q.y() << " " << q.z() << " " << q.w()
        << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

inline Trajectory read_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  Trajectory traj;
  bool have_intrinsics = false;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string first;
    ls >> first;
    if (first == "intrinsics") {
      if (!(ls >> traj.intrinsics.fx >> traj.intrinsics.fy >> traj.intrinsics.cx >>
            traj.intrinsics.cy >> traj.width >> traj.height))
        throw IoError("malformed intrinsics line: " + path);
      if (!traj.intrinsics.valid() || traj.width <= 0 || traj.height <= 0)
        throw IoError("invalid intrinsics: " + path);
      have_intrinsics = true;
      continue;
    }
    int id = 0;
    double tx, ty, tz, qx, qy, qz, qw;
    std::istringstream fs(line);
    if (!(fs >> id >> tx >> ty >> tz >> qx >> qy >> qz >> qw))
      throw IoError("malformed trajectory line: " + line);
    traj.frames.emplace_back(
        id, RigidTransform::from_parts(Eigen::Quaterniond(qw, qx, qy, qz), Vec3(tx, ty, tz)));
  }
  if (!have_intrinsics) throw IoError("trajectory missing intrinsics header: " + path);
  std::sort(traj.frames.begin(), traj.frames.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return traj;
}

}  // namespace objdb
