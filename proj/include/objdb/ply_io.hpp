#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "objdb/geometry.hpp"
#include "objdb/pgm_io.hpp"

namespace objdb {

// In-memory form of the PLY payloads this project reads and writes:
// point clouds with optional normals and colors, triangle meshes, and
// edge sets (used for match-diagnostic line dumps).
struct PlyData {
  std::vector<Vec3> vertices;
  std::vector<Vec3> normals;              // empty or per-vertex
  std::vector<Rgb8> colors;               // empty or per-vertex
  std::vector<std::array<int, 3>> faces;  // triangles
  std::vector<std::array<int, 2>> edges;

  bool has_normals() const { return !normals.empty(); }
  bool has_colors() const { return !colors.empty(); }
};

inline PlyData to_ply(const PointCloud& cloud) {
  PlyData ply;
  ply.vertices = cloud.points;
  ply.normals = cloud.normals;
  return ply;
}

inline void write_ply(const PlyData& ply, const std::string& path, bool binary = true) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "ply\n";
  out << (binary ? "format binary_little_endian 1.0\n" : "format ascii 1.0\n");
  out << "element vertex " << ply.vertices.size() << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  if (ply.has_normals())
    out << "property float nx\nproperty float ny\nproperty float nz\n";
  if (ply.has_colors())
    out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  if (!ply.faces.empty()) {
    out << "element face " << ply.faces.size() << "\n";
    out << "property list uchar int vertex_indices\n";
  }
  if (!ply.edges.empty()) {
    out << "element edge " << ply.edges.size() << "\n";
    out << "property int vertex1\nproperty int vertex2\n";
  }
  out << "end_header\n";

  for (std::size_t i = 0; i < ply.vertices.size(); ++i) {
    if (binary) {
      for (int k = 0; k < 3; ++k) detail::write_le(out, static_cast<float>(ply.vertices[i][k]));
      if (ply.has_normals())
        for (int k = 0; k < 3; ++k) detail::write_le(out, static_cast<float>(ply.normals[i][k]));
      if (ply.has_colors()) {
        detail::write_le(out, ply.colors[i].r);
        detail::write_le(out, ply.colors[i].g);
        detail::write_le(out, ply.colors[i].b);
      }
    } else {
      out << static_cast<float>(ply.vertices[i].x()) << " "
          << static_cast<float>(ply.vertices[i].y()) << " "
          << static_cast<float>(ply.vertices[i].z());
      if (ply.has_normals())
        out << " " << static_cast<float>(ply.normals[i].x()) << " "
            << static_cast<float>(ply.normals[i].y()) << " "
            << static_cast<float>(ply.normals[i].z());
      if (ply.has_colors())
        out << " " << int(ply.colors[i].r) << " " << int(ply.colors[i].g) << " "
            << int(ply.colors[i].b);
      out << "\n";
    }
  }
  for (const auto& f : ply.faces) {
    if (binary) {
      detail::write_le<std::uint8_t>(out, 3);
      for (int k = 0; k < 3; ++k) detail::write_le<std::int32_t>(out, f[k]);
    } else {
      out << "3 " << f[0] << " " << f[1] << " " << f[2] << "\n";
    }
  }
  for (const auto& e : ply.edges) {
    if (binary) {
      detail::write_le<std::int32_t>(out, e[0]);
      detail::write_le<std::int32_t>(out, e[1]);
    } else {
      out << e[0] << " " << e[1] << "\n";
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

// Reads the subset of PLY that write_ply produces (plus ascii/binary_le files
// with the same properties in the same order).
inline PlyData read_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);

  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) throw IoError("not a PLY: " + path);

  bool binary = false;
  std::size_t vertex_count = 0, face_count = 0, edge_count = 0;
  bool has_normals = false, has_colors = false;
  std::string current_element;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "end_header") break;
    if (word == "comment") continue;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "binary_little_endian") binary = true;
      else if (fmt != "ascii") throw IoError("unsupported PLY format: " + fmt);
    } else if (word == "element") {
      std::size_t n = 0;
      ls >> current_element >> n;
      if (current_element == "vertex") vertex_count = n;
      else if (current_element == "face") face_count = n;
      else if (current_element == "edge") edge_count = n;
      else throw IoError("unsupported PLY element: " + current_element);
    } else if (word == "property" && current_element == "vertex") {
      std::string type, name;
      ls >> type >> name;
      if (name == "nx") has_normals = true;
      if (name == "red") has_colors = true;
    }
  }

  PlyData ply;
  ply.vertices.resize(vertex_count);
  if (has_normals) ply.normals.resize(vertex_count);
  if (has_colors) ply.colors.resize(vertex_count);

  for (std::size_t i = 0; i < vertex_count; ++i) {
    if (binary) {
      for (int k = 0; k < 3; ++k) ply.vertices[i][k] = detail::read_le<float>(in);
      if (has_normals)
        for (int k = 0; k < 3; ++k) ply.normals[i][k] = detail::read_le<float>(in);
      if (has_colors) {
        ply.colors[i].r = detail::read_le<std::uint8_t>(in);
        ply.colors[i].g = detail::read_le<std::uint8_t>(in);
        ply.colors[i].b = detail::read_le<std::uint8_t>(in);
      }
    } else {
      double x, y, z;
      if (!(in >> x >> y >> z)) throw IoError("truncated PLY body");
      ply.vertices[i] = Vec3(x, y, z);
      if (has_normals) {
        if (!(in >> x >> y >> z)) throw IoError("truncated PLY body");
        ply.normals[i] = Vec3(x, y, z);
      }
      if (has_colors) {
        int r, g, b;
        if (!(in >> r >> g >> b)) throw IoError("truncated PLY body");
        ply.colors[i] = {static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g),
                         static_cast<std::uint8_t>(b)};
      }
    }
  }
  ply.faces.resize(face_count);
  for (auto& f : ply.faces) {
    int n = 0;
    if (binary) n = detail::read_le<std::uint8_t>(in);
    else if (!(in >> n)) throw IoError("truncated PLY body");
    if (n != 3) throw IoError("only triangle faces supported");
    for (int k = 0; k < 3; ++k) {
      if (binary) f[k] = detail::read_le<std::int32_t>(in);
      else if (!(in >> f[k])) throw IoError("truncated PLY body");
    }
  }
  ply.edges.resize(edge_count);
  for (auto& e : ply.edges) {
    for (int k = 0; k < 2; ++k) {
      if (binary) e[k] = detail::read_le<std::int32_t>(in);
      else if (!(in >> e[k])) throw IoError("truncated PLY body");
    }
  }
  return ply;
}

}  // namespace objdb
