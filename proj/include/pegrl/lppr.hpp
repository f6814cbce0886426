#pragma once

// Largest-possible-potential-energy restriction (LPPR).
//
// On overload the reference pose is pulled toward the actual pose so that the
// positional deviation on each overloaded axis shrinks by eps and the largest
// spring energy 1/2 k e^2 shrinks by eps^2.

#include <algorithm>
#include <cmath>

#include "pegrl/types.hpp"

namespace pegrl {

struct ForceLimits {
  double fx = 40.0;
  double fy = 40.0;
  double mw = 5.0;

  Vec3 vec() const { return {fx, fy, mw}; }

  void validate() const {
    if (!(fx > 0.0 && fy > 0.0 && mw > 0.0)) throw ConfigError("force limits must be > 0");
  }
};

struct ReductionFactor {
  double x = 1.0;
  double y = 1.0;
  double w = 1.0;

  Vec3 vec() const { return {x, y, w}; }
  bool active() const { return x < 1.0 || y < 1.0 || w < 1.0; }

  friend bool operator==(const ReductionFactor&, const ReductionFactor&) = default;
};

// eps = min(1, (limit / |f|)^2) per axis; the boundary |f| = limit is inactive.
// Generic over the scalar so the law can be checked in exact arithmetic.
template <typename T>
T reduction_factor(const T& force, const T& limit) {
  const T mag = force < T(0) ? T(-force) : force;
  if (!(mag > limit)) return T(1);
  const T ratio = limit / mag;
  return ratio * ratio;
}

template <typename T>
T contract_axis(const T& ref, const T& actual, const T& eps) {
  if (eps == T(1)) return ref;
  return eps * ref + (T(1) - eps) * actual;
}

inline ReductionFactor lppr(const Wrench& f, const ForceLimits& limits) {
  return {reduction_factor<double>(f.fx, limits.fx), reduction_factor<double>(f.fy, limits.fy),
          reduction_factor<double>(f.mw, limits.mw)};
}

// x_d' = eps x_d + (1 - eps) x per axis. Axes with eps == 1 are returned
// bit-identical.
inline Pose contract_reference(const Pose& x_d, const Pose& x, const ReductionFactor& eps) {
  return {contract_axis(x_d.x, x.x, eps.x), contract_axis(x_d.y, x.y, eps.y),
          contract_axis(x_d.w, x.w, eps.w)};
}

}  // namespace pegrl
