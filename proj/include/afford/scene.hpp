#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "afford/tensor.hpp"

namespace afford {

struct Vec2 {
  double x = 0.0, y = 0.0;

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double norm() const { return std::hypot(x, y); }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
};

inline double distance(const Vec2& a, const Vec2& b) { return (a - b).norm(); }

// Angle of a displacement vector in [0, 2*pi).
inline double wrap_angle(double a) {
  const double two_pi = 2.0 * M_PI;
  a = std::fmod(a, two_pi);
  return a < 0.0 ? a + two_pi : a;
}

enum class Shape { cube, cylinder_upright, cylinder_lying, sphere };

inline const char* shape_name(Shape s) {
  switch (s) {
    case Shape::cube: return "cube";
    case Shape::cylinder_upright: return "cylinder_upright";
    case Shape::cylinder_lying: return "cylinder_lying";
    case Shape::sphere: return "sphere";
  }
  return "?";
}

inline Shape shape_from_name(const std::string& n) {
  if (n == "cube") return Shape::cube;
  if (n == "cylinder_upright") return Shape::cylinder_upright;
  if (n == "cylinder_lying") return Shape::cylinder_lying;
  if (n == "sphere") return Shape::sphere;
  throw std::invalid_argument("unknown shape: " + n);
}

// Rolling continues after contact for spheres and lying cylinders; this is a
// pure function of the shape.
inline bool shape_rollable(Shape s) {
  return s == Shape::sphere || s == Shape::cylinder_lying;
}

struct ObjectSpec {
  Shape shape = Shape::cube;
  double size = 0.05;  // edge length (cube) or radius (others), meters
  double yaw = 0.0;

  bool rollable() const { return shape_rollable(shape); }

  // Horizontal contact radius used by the gripper kinematics.
  double contact_radius() const { return shape == Shape::cube ? 0.5 * size : size; }

  void validate() const {
    require(size >= 0.02 && size <= 0.10,
            "object size " + std::to_string(size) + " outside [0.02, 0.10] m");
  }
};

inline constexpr double kTableSize = 1.0;          // 1 m x 1 m table
inline constexpr double kTableCenter = 0.5;
inline constexpr double kRenderWindow = 0.6;       // render window edge, meters
inline constexpr int kImageSize = 48;
inline constexpr int kImageChannels = 2;           // (surface height, object mask)

struct Scene {
  ObjectSpec object;
  Vec2 position{kTableCenter, kTableCenter};
  double height = 0.0;  // above the table; 0 when resting

  void validate() const {
    object.validate();
    require(position.x >= 0.0 && position.x <= kTableSize && position.y >= 0.0 &&
                position.y <= kTableSize,
            "scene position outside the table");
    require(height >= 0.0, "scene height must be >= 0");
  }
};

// 48x48, two channels per pixel: surface height in meters and a binary
// object mask.
struct DepthImage {
  Tensor data = Tensor::zeros({kImageSize, kImageSize, kImageChannels});

  float height_at(int row, int col) const { return data.at3(row, col, 0); }
  float mask_at(int row, int col) const { return data.at3(row, col, 1); }
};

// Orthographic top-down analytic render over a fixed window centered on the
// table. Pixel (row, col) covers the world point returned by pixel_center.
inline Vec2 pixel_center(int row, int col) {
  const double px = kRenderWindow / kImageSize;
  const double origin = kTableCenter - 0.5 * kRenderWindow;
  return {origin + (col + 0.5) * px, origin + (row + 0.5) * px};
}

inline DepthImage render_depth(const Scene& scene) {
  scene.validate();
  DepthImage img;
  const ObjectSpec& o = scene.object;
  const double c = std::cos(o.yaw), s = std::sin(o.yaw);
  for (int row = 0; row < kImageSize; ++row)
    for (int col = 0; col < kImageSize; ++col) {
      const Vec2 p = pixel_center(row, col);
      const double dx = p.x - scene.position.x;
      const double dy = p.y - scene.position.y;
      // object frame
      const double u = c * dx + s * dy;
      const double v = -s * dx + c * dy;
      double h = -1.0;
      switch (o.shape) {
        case Shape::cube: {
          const double half = 0.5 * o.size;
          if (std::abs(u) <= half && std::abs(v) <= half) h = o.size;
          break;
        }
        case Shape::cylinder_upright: {
          if (u * u + v * v <= o.size * o.size) h = o.size;
          break;
        }
        case Shape::sphere: {
          const double r2 = o.size * o.size - (u * u + v * v);
          if (r2 >= 0.0) h = std::sqrt(r2);
          break;
        }
        case Shape::cylinder_lying: {
          // axis along the object-frame u direction
          const double half_len = 1.5 * o.size;
          if (std::abs(u) <= half_len && std::abs(v) <= o.size) {
            h = std::sqrt(o.size * o.size - v * v);
          }
          break;
        }
      }
      if (h >= 0.0) {
        img.data.at3(row, col, 0) = static_cast<float>(h + scene.height);
        img.data.at3(row, col, 1) = 1.0f;
      }
    }
  return img;
}

// Classifies the rendered profile as rollable (curved top) or not (flat top).
// Flat shapes have near-constant height over the mask; curved ones do not.
inline bool image_looks_rollable(const DepthImage& img) {
  double max_h = 0.0, sum_h = 0.0;
  long count = 0;
  for (int i = 0; i < kImageSize * kImageSize; ++i) {
    if (img.data.data[static_cast<std::size_t>(i) * 2 + 1] > 0.5f) {
      const double h = img.data.data[static_cast<std::size_t>(i) * 2];
      max_h = std::max(max_h, h);
      sum_h += h;
      ++count;
    }
  }
  if (count == 0 || max_h <= 0.0) return false;
  const double mean_h = sum_h / static_cast<double>(count);
  return (max_h - mean_h) / max_h > 0.1;
}

}  // namespace afford
