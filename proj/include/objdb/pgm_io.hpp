#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "objdb/image.hpp"

namespace objdb {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.write(bytes, sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  char bytes[sizeof(T)];
  if (!in.read(bytes, sizeof(T))) throw IoError("truncated binary payload");
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

inline std::string next_pnm_token(std::istream& in) {
  std::string token;
  while (in) {
    int c = in.get();
    if (c == '#') {  // comment runs to end of line
      while (in && in.get() != '\n') {
      }
      continue;
    }
    if (c == EOF) break;
    if (std::isspace(c)) {
      if (!token.empty()) return token;
      continue;
    }
    token.push_back(static_cast<char>(c));
  }
  if (token.empty()) throw IoError("unexpected end of PNM header");
  return token;
}

}  // namespace detail

// 16-bit binary PGM (P5, maxval 65535, big-endian samples per the Netpbm
// spec). Depth images store millimeters, label images store raw ids;
// value 0 means invalid / unlabeled.
inline void write_pgm16(const Image<std::uint16_t>& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "P5\n" << img.width() << " " << img.height() << "\n65535\n";
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const std::uint16_t v = img.at(x, y);
      const std::array<char, 2> be = {static_cast<char>(v >> 8), static_cast<char>(v & 0xff)};
      out.write(be.data(), 2);
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

inline Image<std::uint16_t> read_pgm16(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  if (detail::next_pnm_token(in) != "P5") throw IoError("not a binary PGM: " + path);
  const int width = std::stoi(detail::next_pnm_token(in));
  const int height = std::stoi(detail::next_pnm_token(in));
  const int maxval = std::stoi(detail::next_pnm_token(in));
  if (width <= 0 || height <= 0) throw IoError("bad PGM dimensions: " + path);
  Image<std::uint16_t> img(width, height);
  if (maxval > 255) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        char b[2];
        if (!in.read(b, 2)) throw IoError("truncated PGM: " + path);
        img.at(x, y) = static_cast<std::uint16_t>((static_cast<unsigned char>(b[0]) << 8) |
                                                  static_cast<unsigned char>(b[1]));
      }
    }
  } else {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        char b;
        if (!in.read(&b, 1)) throw IoError("truncated PGM: " + path);
        img.at(x, y) = static_cast<unsigned char>(b);
      }
    }
  }
  return img;
}

inline void write_pgm8(const Image<std::uint8_t>& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "P5\n" << img.width() << " " << img.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data().data()),
            static_cast<std::streamsize>(img.data().size()));
  if (!out) throw IoError("write failed: " + path);
}

struct Rgb8 {
  std::uint8_t r = 0, g = 0, b = 0;
};

inline void write_ppm8(const Image<Rgb8>& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "P6\n" << img.width() << " " << img.height() << "\n255\n";
  for (const Rgb8& px : img.data()) {
    const std::array<char, 3> rgb = {static_cast<char>(px.r), static_cast<char>(px.g),
                                     static_cast<char>(px.b)};
    out.write(rgb.data(), 3);
  }
  if (!out) throw IoError("write failed: " + path);
}

// Stable label -> color mapping for debug and mesh exports. Label 0 is black.
inline Rgb8 label_color(std::uint32_t label) {
  if (label == 0) return {0, 0, 0};
  // Golden-ratio hue walk gives well-separated colors for small ids.
  const double hue = std::fmod(0.61803398875 * label, 1.0) * 6.0;
  const double x = 1.0 - std::abs(std::fmod(hue, 2.0) - 1.0);
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hue)) {
    case 0: r = 1, g = x; break;
    case 1: r = x, g = 1; break;
    case 2: g = 1, b = x; break;
    case 3: g = x, b = 1; break;
    case 4: r = x, b = 1; break;
    default: r = 1, b = x; break;
  }
  const double v = 0.55 + 0.45 * (((label * 2654435761u) >> 8) % 100) / 99.0;
  return {static_cast<std::uint8_t>(255 * v * r), static_cast<std::uint8_t>(255 * v * g),
          static_cast<std::uint8_t>(255 * v * b)};
}

}  // namespace objdb
