#pragma once

// Virtual PTZ camera model and planar homography algebra.
//
// Frames
//   * Bird's-eye raster: continuous pixel coordinates (u, v), u to the right,
//     v downwards, pixel (i, j) covering [i, i+1) x [j, j+1).
//   * World: X = u * units_per_pixel, Y = v * units_per_pixel, Z pointing into
//     the ground. The frame is right-handed, so a camera mounted at height z
//     sits at world Z = -z.
//   * Camera: x_cam = R * (X - C), image = K * x_cam. With R = I the camera
//     looks straight down at the ground plane.
//
// R = Q * S where S is a fixed -90 degree rotation about the world y-axis
// (turning the nadir-looking camera into a horizontal one) and Q holds pan
// and tilt. Pan turns about the world up-axis, which S maps onto its own
// x-axis; tilt turns about the camera lateral axis (camera y). Pan is applied
// first. With this convention tilt = 0 is a horizontal view and tilt = -90
// looks straight down.

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "topocal/error.hpp"

namespace topocal {

using Mat3 = Eigen::Matrix3d;
using Mat34 = Eigen::Matrix<double, 3, 4>;
using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Param8 = std::array<double, 8>;

namespace geometry {

// Singularity threshold on sigma_min / sigma_max. A scale-free determinant
// test; camera homographies have strongly unequal column norms, which rules
// out thresholding det(H / |H|) directly.
inline constexpr double kDegenerateDet = 1e-12;

inline double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }

// One virtual PTZ camera sample. Angles in degrees, focal in pixels, position
// in world units (z is the mounting height above the ground plane).
struct CameraParams {
  double pan_deg = 0.0;
  double tilt_deg = 0.0;
  double focal_px = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 1.0;

  void validate() const {
    if (!(focal_px > 0.0) || !std::isfinite(focal_px))
      throw InvalidParameter("camera focal length must be positive, got " +
                             std::to_string(focal_px));
    if (!(z > 0.0) || !std::isfinite(z))
      throw InvalidParameter("camera height must be positive, got " + std::to_string(z));
    if (!(pan_deg >= -180.0 && pan_deg <= 180.0))
      throw InvalidParameter("pan must lie in [-180, 180], got " + std::to_string(pan_deg));
    if (!(tilt_deg >= -90.0 && tilt_deg <= 0.0))
      throw InvalidParameter("tilt must lie in [-90, 0], got " + std::to_string(tilt_deg));
    if (!std::isfinite(x) || !std::isfinite(y))
      throw InvalidParameter("camera position must be finite");
  }

  // Camera center in world coordinates.
  Vec3 center() const { return Vec3(x, y, -z); }

  friend bool operator==(const CameraParams&, const CameraParams&) = default;
};

// Pinhole intrinsics with square pixels and zero skew.
class IntrinsicMatrix {
 public:
  IntrinsicMatrix(double focal_px, const Vec2& principal_point) {
    if (!(focal_px > 0.0) || !std::isfinite(focal_px))
      throw InvalidParameter("focal length must be positive, got " + std::to_string(focal_px));
    k_ << focal_px, 0.0, principal_point.x(),  //
        0.0, focal_px, principal_point.y(),    //
        0.0, 0.0, 1.0;
  }

  const Mat3& matrix() const { return k_; }
  double focal() const { return k_(0, 0); }
  Vec2 principal_point() const { return {k_(0, 2), k_(1, 2)}; }

 private:
  Mat3 k_;
};

inline IntrinsicMatrix intrinsics(double focal_px, const Vec2& principal_point) {
  return IntrinsicMatrix(focal_px, principal_point);
}

struct RotationDecomposition {
  Mat3 q;  // pan/tilt
  Mat3 s;  // fixed base orientation
  Mat3 r() const { return q * s; }
};

namespace detail {

inline Mat3 rot_x(double rad) {
  const double c = std::cos(rad), s = std::sin(rad);
  Mat3 m;
  m << 1, 0, 0,  //
      0, c, -s,  //
      0, s, c;
  return m;
}

inline Mat3 rot_y(double rad) {
  const double c = std::cos(rad), s = std::sin(rad);
  Mat3 m;
  m << c, 0, s,  //
      0, 1, 0,   //
      -s, 0, c;
  return m;
}

}  // namespace detail

inline Mat3 base_rotation() { return detail::rot_y(deg_to_rad(-90.0)); }

inline RotationDecomposition rotation_from_pan_tilt(double pan_deg, double tilt_deg) {
  const Mat3 pan = detail::rot_x(deg_to_rad(pan_deg));
  const Mat3 tilt = detail::rot_y(deg_to_rad(-tilt_deg));
  return {tilt * pan, base_rotation()};
}

// P = K * Q * S * [I | -C]; a world point X maps to K * R * (X - C).
inline Mat34 projection(const IntrinsicMatrix& k, const RotationDecomposition& rot,
                        const Vec3& center) {
  Mat34 ic;
  ic.leftCols<3>() = Mat3::Identity();
  ic.col(3) = -center;
  return k.matrix() * rot.r() * ic;
}

inline bool is_degenerate(const Mat3& m) {
  if (!m.allFinite()) return true;
  const Vec3 sv = Eigen::JacobiSVD<Mat3>(m).singularValues();
  return !(sv(0) > 0.0) || sv(2) < kDegenerateDet * sv(0);
}

// 3x3 projective transform. When `normalized()` is set the bottom-right entry
// is exactly 1.
class Homography {
 public:
  Homography() : m_(Mat3::Identity()), normalized_(true) {}
  explicit Homography(const Mat3& m, bool normalized = false) : m_(m), normalized_(normalized) {}

  static Homography identity() { return Homography(); }

  static Homography translation(double tx, double ty) {
    Mat3 m = Mat3::Identity();
    m(0, 2) = tx;
    m(1, 2) = ty;
    return Homography(m, true);
  }

  const Mat3& matrix() const { return m_; }
  bool normalized() const { return normalized_; }
  double operator()(int r, int c) const { return m_(r, c); }

  // Image of a point (u, v).
  Vec2 apply(const Vec2& p) const {
    const Vec3 q = m_ * Vec3(p.x(), p.y(), 1.0);
    return {q.x() / q.z(), q.y() / q.z()};
  }

  friend bool operator==(const Homography&, const Homography&) = default;

 private:
  Mat3 m_;
  bool normalized_;
};

inline Homography normalize(const Homography& h) {
  const Mat3& m = h.matrix();
  if (is_degenerate(m)) throw DegenerateHomography("cannot normalize a singular homography");
  const double h33 = m(2, 2);
  if (std::abs(h33) < kDegenerateDet * m.norm())
    throw DegenerateHomography("homography has a vanishing bottom-right entry");
  Mat3 n = m / h33;
  n(2, 2) = 1.0;
  return Homography(n, true);
}

inline Homography compose(const Homography& a, const Homography& b) {
  return normalize(Homography(a.matrix() * b.matrix()));
}

inline Homography invert(const Homography& h) {
  if (is_degenerate(h.matrix())) throw DegenerateHomography("cannot invert a singular homography");
  return normalize(Homography(h.matrix().inverse()));
}

inline Param8 to_param8(const Homography& h) {
  const Homography n = h.normalized() ? h : normalize(h);
  const Mat3& m = n.matrix();
  return {m(0, 0), m(0, 1), m(0, 2), m(1, 0), m(1, 1), m(1, 2), m(2, 0), m(2, 1)};
}

inline Homography from_param8(const Param8& v) {
  Mat3 m;
  m << v[0], v[1], v[2],  //
      v[3], v[4], v[5],   //
      v[6], v[7], 1.0;
  if (is_degenerate(m)) throw DegenerateHomography("parameter vector gives a singular homography");
  return Homography(m, true);
}

// Output raster and bird's-eye scale that a camera sample is rendered into.
struct ViewConfig {
  int width = 64;
  int height = 64;
  double units_per_pixel = 1.0;  // bird's-eye raster scale
  std::optional<Vec2> principal_point;  // defaults to the output center

  Vec2 effective_principal_point() const {
    return principal_point.value_or(Vec2(0.5 * width, 0.5 * height));
  }
};

// Ground-plane homography: columns (1, 2, 4) of P, applied to bird's-eye
// pixel coordinates scaled into world units.
inline Homography homography_from_params(const CameraParams& p, const ViewConfig& view) {
  p.validate();
  if (!(view.units_per_pixel > 0.0))
    throw InvalidParameter("units_per_pixel must be positive");
  const Mat34 proj = projection(intrinsics(p.focal_px, view.effective_principal_point()),
                                rotation_from_pan_tilt(p.pan_deg, p.tilt_deg), p.center());
  Mat3 ground;
  ground.col(0) = proj.col(0) * view.units_per_pixel;
  ground.col(1) = proj.col(1) * view.units_per_pixel;
  ground.col(2) = proj.col(3);
  if (is_degenerate(ground))
    throw DegenerateHomography("camera sample gives a singular ground-plane homography");
  return normalize(Homography(ground));
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const CameraParams& p) {
  j = nlohmann::json{{"pan_deg", p.pan_deg},   {"tilt_deg", p.tilt_deg}, {"focal_px", p.focal_px},
                     {"x_units", p.x},         {"y_units", p.y},         {"z_units", p.z}};
}

inline void from_json(const nlohmann::json& j, CameraParams& p) {
  p.pan_deg = j.at("pan_deg").get<double>();
  p.tilt_deg = j.at("tilt_deg").get<double>();
  p.focal_px = j.at("focal_px").get<double>();
  p.x = j.at("x_units").get<double>();
  p.y = j.at("y_units").get<double>();
  p.z = j.at("z_units").get<double>();
}

inline void to_json(nlohmann::json& j, const Homography& h) {
  auto arr = nlohmann::json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) arr.push_back(h(r, c));
  j = nlohmann::json{{"matrix", arr}, {"normalized", h.normalized()}};
}

inline void from_json(const nlohmann::json& j, Homography& h) {
  const auto& arr = j.at("matrix");
  if (!arr.is_array() || arr.size() != 9)
    throw InvalidInput("homography JSON needs a row-major array of 9 numbers");
  Mat3 m;
  for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = arr.at(i).get<double>();
  const bool normalized = j.value("normalized", false) && m(2, 2) == 1.0;
  h = Homography(m, normalized);
}

}  // namespace geometry

using geometry::CameraParams;
using geometry::Homography;

}  // namespace topocal
