#pragma once

// 2D quasi-static peg-in-hole world.
//
// World frame: the hole mouth lies on y = 0 and the hole occupies
// |x| <= D/2, -H <= y <= 0. Everything with y < 0 outside the hole is
// workpiece material. The peg is a rectangle of width d_peg and length L
// whose bottom-center is the tool center point (TCP); its bottom corners are
// chamfered by the fillet radius.
//
// The compliant robot is a diagonal spring K between the reference pose x_d
// and the TCP pose x. An equilibrium is a pose where the spring load balances
// the penalty contact load.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>
#include <optional>
#include <vector>

#include "pegrl/types.hpp"

namespace pegrl {

struct PegHoleGeometry {
  double hole_width = 23.04e-3;
  double peg_width = 23.0e-3;
  double hole_depth = 36.0e-3;
  double fillet_radius = 0.5e-3;
  double peg_length = 50.0e-3;

  void validate() const {
    if (!(peg_width > 0.0 && hole_width > peg_width))
      throw ConfigError("geometry: require hole_width > peg_width > 0");
    if (!(hole_depth > 0.0)) throw ConfigError("geometry: require hole_depth > 0");
    if (!(fillet_radius >= 0.0 && fillet_radius < peg_width / 2.0))
      throw ConfigError("geometry: require 0 <= fillet_radius < peg_width/2");
    if (!(peg_length > fillet_radius)) throw ConfigError("geometry: peg_length too short");
  }
};

struct ContactParams {
  double k_env = 1.0e6;
  double mu = 0.3;
  double solver_tol = 1.0e-3;
  int max_iters = 100;
  // Tangential slip (m) at which regularized friction reaches ~70% of mu*N.
  double slip_reg = 1.0e-5;
  // Length over which the force direction blends between the faces of a
  // corner; penetration depth is unaffected.
  double corner_blend = 1.0e-6;

  void validate() const {
    if (!(k_env > 0.0)) throw ConfigError("contact: require k_env > 0");
    if (!(mu >= 0.0 && mu < 1.0)) throw ConfigError("contact: require 0 <= mu < 1");
    if (!(solver_tol > 0.0)) throw ConfigError("contact: require solver_tol > 0");
    if (max_iters <= 0) throw ConfigError("contact: require max_iters > 0");
    if (!(slip_reg > 0.0)) throw ConfigError("contact: require slip_reg > 0");
    if (!(corner_blend > 0.0)) throw ConfigError("contact: require corner_blend > 0");
  }
};

// One active penalty contact. `normal` is the unit direction of the normal
// force acting on the peg.
struct Contact {
  Vec2 point;
  Vec2 normal;
  double depth = 0.0;
  double stiffness = 0.0;
  Vec2 body_point;  // material point of the peg at the contact, peg frame
};

namespace detail {

inline Eigen::Matrix2d rotation(double w) {
  const double c = std::cos(w), s = std::sin(w);
  Eigen::Matrix2d r;
  r << c, -s, s, c;
  return r;
}

// Chamfered peg outline, counter-clockwise, in the peg frame
// (x lateral, y along the peg axis, origin at the TCP).
inline std::array<Vec2, 6> peg_outline(const PegHoleGeometry& g) {
  const double h = g.peg_width / 2.0, r = g.fillet_radius, len = g.peg_length;
  return {Vec2(-h + r, 0.0), Vec2(h - r, 0.0), Vec2(h, r),
          Vec2(h, len),      Vec2(-h, len),    Vec2(-h, r)};
}

struct Penetration {
  double depth;
  Vec2 normal;
};

// Depth is the smallest face distance; the direction averages the face
// normals with weights exp(-(d_i - d_min) / blend), which keeps the force
// continuous across corner bisectors.
template <std::size_t N>
inline Penetration blended(const std::array<double, N>& depth, const std::array<Vec2, N>& normal,
                           double blend) {
  const double dmin = *std::min_element(depth.begin(), depth.end());
  Vec2 n = Vec2::Zero();
  for (std::size_t i = 0; i < N; ++i) n += std::exp(-(depth[i] - dmin) / blend) * normal[i];
  return {dmin, n.normalized()};
}

// Penetrations of a point into the workpiece, one per material block it lies
// in: the two walls beside the hole and the floor below it. Normals give the
// force direction on the peg.
inline std::vector<Penetration> material_penetration(const Vec2& p, const PegHoleGeometry& g,
                                                     double blend) {
  std::vector<Penetration> out;
  const double half = g.hole_width / 2.0;
  if (p.y() < 0.0 && std::abs(p.x()) > half) {
    const double side_sign = p.x() > 0.0 ? -1.0 : 1.0;
    out.push_back(blended<2>({std::abs(p.x()) - half, -p.y()},
                             {Vec2(side_sign, 0.0), Vec2(0.0, 1.0)}, blend));
  }
  if (p.y() < -g.hole_depth) out.push_back({-g.hole_depth - p.y(), Vec2(0.0, 1.0)});
  return out;
}

}  // namespace detail

// Enumerates penetrating contact candidates: the four chamfer vertices of the
// peg bottom against walls, floor and top surface, and the two hole mouth
// edges against the peg faces. Each bottom vertex carries k_env/2 so that a
// flush face contact has total stiffness k_env.
inline std::vector<Contact> enumerate_contacts(const Pose& pose, const PegHoleGeometry& g,
                                               const ContactParams& params) {
  std::vector<Contact> contacts;
  const Eigen::Matrix2d rot = detail::rotation(pose.w);
  const Vec2 tcp(pose.x, pose.y);
  const auto outline = detail::peg_outline(g);

  for (int idx : {0, 1, 2, 5}) {
    const Vec2 p = tcp + rot * outline[idx];
    for (const auto& pen : detail::material_penetration(p, g, params.corner_blend)) {
      contacts.push_back({p, pen.normal, pen.depth, 0.5 * params.k_env, outline[idx]});
    }
  }

  const double half = g.hole_width / 2.0;
  for (double sx : {-1.0, 1.0}) {
    const Vec2 edge(sx * half, 0.0);
    const Vec2 q = rot.transpose() * (edge - tcp);
    std::array<double, 5> dist{};
    std::array<Vec2, 5> normal{};
    bool inside = true;
    for (std::size_t i = 0, k = 0; i < outline.size(); ++i) {
      const Vec2& a = outline[i];
      const Vec2& b = outline[(i + 1) % outline.size()];
      const Vec2 t = (b - a).normalized();
      const Vec2 n_out(t.y(), -t.x());
      const double signed_dist = n_out.dot(q - a);
      if (signed_dist >= 0.0) {
        inside = false;
        break;
      }
      if (i == 3) continue;  // top face: the peg is gripped there
      dist[k] = -signed_dist;
      normal[k] = -n_out;
      ++k;
    }
    if (inside) {
      const auto pen = detail::blended<5>(dist, normal, params.corner_blend);
      contacts.push_back({edge, rot * pen.normal, pen.depth, params.k_env, q});
    }
  }
  return contacts;
}

// Total contact load on the peg about the TCP. When `slip_reference` is given,
// regularized Coulomb friction opposes the tangential displacement of each
// contact's material point since that pose.
inline Wrench contact_wrench(const Pose& pose, const PegHoleGeometry& g, const ContactParams& params,
                             const Pose* slip_reference = nullptr) {
  Wrench total;
  const Vec2 tcp(pose.x, pose.y);
  const auto contacts = enumerate_contacts(pose, g, params);
  std::optional<Eigen::Matrix2d> prev_rot;
  Vec2 prev_tcp = Vec2::Zero();
  if (slip_reference && params.mu > 0.0) {
    prev_rot = detail::rotation(slip_reference->w);
    prev_tcp = Vec2(slip_reference->x, slip_reference->y);
  }
  for (const auto& c : contacts) {
    const double fn = c.stiffness * c.depth;
    Vec2 force = fn * c.normal;
    if (prev_rot) {
      const Vec2 before = prev_tcp + *prev_rot * c.body_point;
      const Vec2 tangent(-c.normal.y(), c.normal.x());
      const double slip = tangent.dot(c.point - before);
      force -= params.mu * fn * slip / std::hypot(slip, params.slip_reg) * tangent;
    }
    const Vec2 arm = c.point - tcp;
    total.fx += force.x();
    total.fy += force.y();
    total.mw += arm.x() * force.y() - arm.y() * force.x();
  }
  return total;
}

// External load reported by the compliant robot: f = K (x_d - x).
inline Wrench measured_wrench(const Pose& x_d, const Pose& x, const Stiffness& k) {
  return {k.kx * (x_d.x - x.x), k.ky * (x_d.y - x.y), k.kw * (x_d.w - x.w)};
}

// Depth of the peg tip below the mouth plane, clamped to [0, H].
inline double insertion_depth(const Pose& pose, const PegHoleGeometry& g) {
  return std::clamp(-pose.y, 0.0, g.hole_depth);
}

// Lateral TCP offset that puts the peg axis through the hole axis at the
// mouth plane for a tip at depth `depth` and tilt `w`.
inline double centered_tip_offset(double depth, double w) { return depth * std::tan(w); }

struct EquilibriumReport {
  Pose pose;
  double residual = 0.0;  // infinity norm of the force balance
  int iterations = 0;
  Pose slip_reference;    // pose friction was referenced to in the final solve
  int substeps = 1;
};

namespace detail {

inline Vec3 balance_residual(const Vec3& x, const Pose& x_d, const Stiffness& k,
                             const PegHoleGeometry& g, const ContactParams& params,
                             const Pose& slip_reference) {
  const Pose p = Pose::from(x);
  return measured_wrench(x_d, p, k).vec() + contact_wrench(p, g, params, &slip_reference).vec();
}

struct NewtonOutcome {
  Vec3 x;
  double residual;
  int iterations;
  bool converged;
};

// Damped Newton on r(x) = 0 with a central-difference Jacobian and merit
// 1/2 |scale .* r|^2. Falls back to Levenberg-Marquardt for a singular
// Jacobian and to steepest descent when the Newton step fails the merit test.
template <typename Residual>
NewtonOutcome damped_newton(const Residual& residual, Vec3 x, const Vec3& scale, double tol,
                            int max_iters) {
  const Vec3 fd_step(1e-9, 1e-9, 1e-7);
  auto merit = [&](const Vec3& r) { return 0.5 * r.cwiseProduct(scale).squaredNorm(); };
  Vec3 r = residual(x);
  for (int it = 0; it < max_iters; ++it) {
    const double norm = r.cwiseAbs().maxCoeff();
    if (norm < tol) return {x, norm, it, true};

    Mat3 jac;
    for (int j = 0; j < 3; ++j) {
      Vec3 xp = x, xm = x;
      xp[j] += fd_step[j];
      xm[j] -= fd_step[j];
      jac.col(j) = (residual(xp) - residual(xm)) / (2.0 * fd_step[j]);
    }

    const double m0 = merit(r);
    auto try_direction = [&](const Vec3& dir, double alpha) -> bool {
      for (int ls = 0; ls < 40; ++ls, alpha *= 0.5) {
        const Vec3 xn = x + alpha * dir;
        const Vec3 rn = residual(xn);
        if (merit(rn) < m0) {
          x = xn;
          r = rn;
          return true;
        }
      }
      return false;
    };

    const auto qr = jac.colPivHouseholderQr();
    Vec3 newton = qr.solve(-r);
    if (!newton.allFinite() || qr.rank() < 3) {
      // Singular axis (zero stiffness and no contact).
      const Mat3 jt = jac.transpose() * scale.cwiseAbs2().asDiagonal();
      const Mat3 normal = jt * jac;
      const double damping = 1e-12 * (1.0 + normal.diagonal().maxCoeff());
      newton = (normal + damping * Mat3::Identity()).ldlt().solve(-jt * r);
    }
    if (newton.allFinite() && try_direction(newton, 1.0)) continue;

    const Vec3 grad = jac.transpose() * scale.cwiseAbs2().asDiagonal() * r;
    const Vec3 jg = jac * grad;
    const double denom = jg.cwiseProduct(scale).squaredNorm();
    const double cauchy = denom > 0.0 ? grad.squaredNorm() / denom : 1e-9;
    if (grad.allFinite() && try_direction(-grad, cauchy)) continue;
    break;
  }
  const double norm = r.cwiseAbs().maxCoeff();
  return {x, norm, max_iters, norm < tol};
}

// Moments are compared against forces over a lever of a quarter peg width.
inline Vec3 merit_scale(const PegHoleGeometry& g) { return {1.0, 1.0, 4.0 / g.peg_width}; }

[[noreturn]] inline void stalled(double residual) {
  std::ostringstream msg;
  msg << "equilibrium solve stalled, residual " << residual;
  throw NonConvergence(residual, msg.str());
}

}  // namespace detail

// Finds x* with K (x_d - x*) + contact_wrench(x*) = 0 starting from x_init.
// Friction is part of the residual and references x_init (the previous
// equilibrium).
inline EquilibriumReport solve_equilibrium_report(const Pose& x_d, const Stiffness& k,
                                                  const PegHoleGeometry& g,
                                                  const ContactParams& params,
                                                  const Pose& x_init) {
  auto residual = [&](const Vec3& x) {
    return detail::balance_residual(x, x_d, k, g, params, x_init);
  };
  const auto out = detail::damped_newton(residual, x_init.vec(), detail::merit_scale(g),
                                         params.solver_tol, params.max_iters);
  if (!out.converged) detail::stalled(out.residual);
  return {Pose::from(out.x), out.residual, out.iterations, x_init};
}

inline Pose solve_equilibrium(const Pose& x_d, const Stiffness& k, const PegHoleGeometry& g,
                              const ContactParams& params, const Pose& x_init) {
  return solve_equilibrium_report(x_d, k, g, params, x_init).pose;
}

// Viscous relaxation toward rest at fixed (x_d, k), used when the static
// branch ends (snap-through). Each pseudo-time step solves
// r(x) = D (x - x_n) with friction referenced at x_n; D shrinks after
// accepted steps and grows after rejected ones. Returns once an undamped
// solve from the current state converges.
inline EquilibriumReport relax_to_equilibrium(const Pose& x_d, const Stiffness& k,
                                              const PegHoleGeometry& g,
                                              const ContactParams& params, const Pose& x_init,
                                              int max_steps = 400) {
  const Vec3 scale = detail::merit_scale(g);
  const double lever = 1.0 / scale[2];
  Vec3 base(params.k_env, params.k_env, params.k_env * lever * lever);
  double c = 1.0;
  Vec3 xn = x_init.vec();
  double last_residual = std::numeric_limits<double>::infinity();
  for (int step = 0; step < max_steps; ++step) {
    const Pose ref = Pose::from(xn);
    auto undamped = [&](const Vec3& x) {
      return detail::balance_residual(x, x_d, k, g, params, ref);
    };
    const auto direct = detail::damped_newton(undamped, xn, scale, params.solver_tol, 30);
    if (direct.converged) return {Pose::from(direct.x), direct.residual, step, ref};
    last_residual = direct.residual;

    const Vec3 D = c * base;
    auto damped = [&](const Vec3& x) {
      return (undamped(x) - D.cwiseProduct(x - xn)).eval();
    };
    const auto out = detail::damped_newton(damped, xn, scale, params.solver_tol, params.max_iters);
    if (out.converged) {
      xn = out.x;
      c *= 0.5;
    } else {
      c *= 4.0;
    }
  }
  detail::stalled(last_residual);
}

// Quasi-static loading path: the reference and stiffness move linearly from
// (from_d, from_k) to (to_d, to_k) and the equilibrium is tracked along the
// way, each solve warm-started and friction-referenced at the previous one.
// A failed increment is halved; below 1/2^max_halvings of the path the state
// is relaxed to rest at that increment instead.
inline EquilibriumReport solve_equilibrium_path(const Pose& from_d, const Stiffness& from_k,
                                                const Pose& to_d, const Stiffness& to_k,
                                                const PegHoleGeometry& g,
                                                const ContactParams& params, const Pose& x_init,
                                                int max_halvings = 8) {
  auto at = [&](double s) {
    if (s == 1.0) return std::pair{to_d, to_k};
    const Pose d = Pose::from(from_d.vec() + s * (to_d.vec() - from_d.vec()));
    const Stiffness k = Stiffness::from(from_k.vec() + s * (to_k.vec() - from_k.vec()));
    return std::pair{d, k};
  };
  const double min_step = std::ldexp(1.0, -max_halvings);
  double s = 0.0, step = 1.0;
  Pose x = x_init;
  EquilibriumReport last;
  int substeps = 0;
  while (s < 1.0) {
    const double target = std::min(1.0, s + step);
    const auto [d, k] = at(target);
    try {
      last = solve_equilibrium_report(d, k, g, params, x);
    } catch (const NonConvergence&) {
      if (step > min_step) {
        step *= 0.5;
        continue;
      }
      last = relax_to_equilibrium(d, k, g, params, x);
    }
    x = last.pose;
    s = target;
    ++substeps;
    step = std::min(1.0 - s, 2.0 * step);
  }
  last.substeps = substeps;
  return last;
}

}  // namespace pegrl
