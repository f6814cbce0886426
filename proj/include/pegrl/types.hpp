#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace pegrl {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = std::numbers::pi;

inline constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
inline constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }

// Wraps an angle into (-pi, pi].
inline double wrap_angle(double w) {
  if (w > -kPi && w <= kPi) return w;
  double r = std::remainder(w, 2.0 * kPi);
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

// Pose of the tool center point (peg bottom-center) in the assembly plane.
// y points out of the hole; the hole mouth lies on y = 0.
struct Pose {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;

  Vec3 vec() const { return {x, y, w}; }
  static Pose from(const Vec3& v) { return {v[0], v[1], v[2]}; }
  bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(w); }
  Pose mirrored() const { return {-x, y, -w}; }

  friend bool operator==(const Pose&, const Pose&) = default;
};

// Generalized force (f_x, f_y, m_w); moments are taken about the tool center point.
struct Wrench {
  double fx = 0.0;
  double fy = 0.0;
  double mw = 0.0;

  Vec3 vec() const { return {fx, fy, mw}; }
  static Wrench from(const Vec3& v) { return {v[0], v[1], v[2]}; }
  bool finite() const { return std::isfinite(fx) && std::isfinite(fy) && std::isfinite(mw); }
  Wrench mirrored() const { return {-fx, fy, -mw}; }

  Wrench& operator+=(const Wrench& o) {
    fx += o.fx;
    fy += o.fy;
    mw += o.mw;
    return *this;
  }
  friend Wrench operator+(Wrench a, const Wrench& b) { return a += b; }
  friend bool operator==(const Wrench&, const Wrench&) = default;
};

// Diagonal Cartesian stiffness: N/m, N/m, N*m/rad.
struct Stiffness {
  double kx = 0.0;
  double ky = 0.0;
  double kw = 0.0;

  Vec3 vec() const { return {kx, ky, kw}; }
  static Stiffness from(const Vec3& v) { return {v[0], v[1], v[2]}; }

  friend bool operator==(const Stiffness&, const Stiffness&) = default;
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The quasi-static equilibrium solve did not reach its residual tolerance.
class NonConvergence : public Error {
 public:
  NonConvergence(double residual, const std::string& what)
      : Error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

class InsufficientData : public Error {
 public:
  using Error::Error;
};

class SingularInnovation : public Error {
 public:
  using Error::Error;
};

class ModelUnavailable : public Error {
 public:
  using Error::Error;
};

class InsufficientBuffer : public Error {
 public:
  using Error::Error;
};

class MalformedDataset : public Error {
 public:
  using Error::Error;
};

class CheckpointMismatch : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace pegrl
