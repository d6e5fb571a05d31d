#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "objdb/geometry.hpp"

namespace objdb {

template <typename T>
class Image {
 public:
  Image() = default;
  Image(int width, int height, T fill = T{})
      : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height, fill) {
    if (width < 0 || height < 0) throw std::invalid_argument("negative image size");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }

  bool in_bounds(int x, int y) const { return x >= 0 && x < width_ && y >= 0 && y < height_; }

  T& at(int x, int y) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  const T& at(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  const std::vector<T>& data() const { return data_; }
  std::vector<T>& data() { return data_; }

  bool same_size(const Image& other) const {
    return width_ == other.width_ && height_ == other.height_;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;

  bool valid() const { return fx > 0.0 && fy > 0.0; }
};

// Depth frame in meters. Camera convention: x right, y down, z forward
// (depth is the z coordinate, not the ray length). Zero or non-finite
// values mark invalid pixels.
struct DepthImage {
  Image<float> depth;
  CameraIntrinsics intrinsics;

  int width() const { return depth.width(); }
  int height() const { return depth.height(); }

  bool valid_at(int x, int y) const {
    const float d = depth.at(x, y);
    return std::isfinite(d) && d > 0.0f;
  }

  // 3D point in the camera frame for pixel (x, y) at depth d.
  Vec3 backproject(int x, int y, double d) const {
    return Vec3((x - intrinsics.cx) / intrinsics.fx * d, (y - intrinsics.cy) / intrinsics.fy * d,
                d);
  }

  Vec3 backproject(int x, int y) const { return backproject(x, y, depth.at(x, y)); }
};

}  // namespace objdb
