#pragma once

// Learning-facing task wrapper around the peg-in-hole world: observation
// assembly, action application, LPPR supervision, reward and termination.

#include <algorithm>
#include <cstdint>
#include <random>

#include "pegrl/lppr.hpp"
#include "pegrl/sim.hpp"

namespace pegrl {

inline constexpr int kStateDim = 13;
inline constexpr int kActionDim = 6;

using StateVec = Eigen::Matrix<double, kStateDim, 1>;
using ActionVec = Eigen::Matrix<double, kActionDim, 1>;

// Observation [e, f, df, dx, xi]: positional deviation, measured wrench,
// wrench increment, pose increment and insertion fraction.
struct State {
  Vec3 e = Vec3::Zero();
  Vec3 f = Vec3::Zero();
  Vec3 df = Vec3::Zero();
  Vec3 dx = Vec3::Zero();
  double xi = 0.0;

  StateVec vec() const {
    StateVec v;
    v << e, f, df, dx, xi;
    return v;
  }
  static State from(const StateVec& v) {
    return {v.segment<3>(0), v.segment<3>(3), v.segment<3>(6), v.segment<3>(9), v[12]};
  }
};

// Reference increment and commanded stiffness.
struct Action {
  Vec3 dxd = Vec3::Zero();
  Stiffness k;

  ActionVec vec() const {
    ActionVec v;
    v << dxd, k.vec();
    return v;
  }
  static Action from(const ActionVec& v) { return {v.head<3>(), Stiffness::from(v.tail<3>())}; }
};

// Action box: |dxd| <= dxd_max, 0 <= k <= k_max.
struct ActionLimits {
  Vec3 dxd_max{1.0e-3, 1.0e-3, deg2rad(2.0)};
  Vec3 k_max{4000.0, 4000.0, 200.0};

  ActionVec lower() const {
    ActionVec v;
    v << -dxd_max, Vec3::Zero();
    return v;
  }
  ActionVec upper() const {
    ActionVec v;
    v << dxd_max, k_max;
    return v;
  }
  ActionVec range() const { return upper() - lower(); }
  ActionVec clamp(const ActionVec& a) const { return a.cwiseMax(lower()).cwiseMin(upper()); }
  bool contains(const ActionVec& a) const {
    return (a.array() >= lower().array()).all() && (a.array() <= upper().array()).all();
  }

  void validate() const {
    if (!((dxd_max.array() > 0.0).all() && (k_max.array() > 0.0).all()))
      throw ConfigError("action limits must be > 0");
  }
};

struct ExtendedAction {
  Action a;
  ReductionFactor eps;
};

struct RewardWeights {
  double w_dis = 1.0;
  double w_f = 1.0;
  double w_stf = 0.1;
  double success_bonus = 1.0;
  double overload_bonus = -1.0;

  void validate() const {
    if (!(w_dis >= 0.0 && w_f >= 0.0 && w_stf >= 0.0))
      throw ConfigError("reward weights must be >= 0");
  }
};

enum class Termination { kNone, kSuccess, kOverload };

inline double terminal_bonus(Termination t, const RewardWeights& w) {
  switch (t) {
    case Termination::kSuccess:
      return w.success_bonus;
    case Termination::kOverload:
      return w.overload_bonus;
    case Termination::kNone:
      break;
  }
  return 0.0;
}

// Per-step reward without the terminal bonus:
//   -w_dis dy / dy_max - w_f max_i(|f_i| / f_i_max)^2 - w_stf max_i(k_i / k_i_max)^2
// where dy is the realized axial displacement of the peg.
inline double shaped_reward(const Action& a, const State& next, const RewardWeights& w,
                            const ForceLimits& limits, const ActionLimits& box) {
  const double progress = next.dx[1] / box.dxd_max[1];
  const double force = next.f.cwiseAbs().cwiseQuotient(limits.vec()).maxCoeff();
  const double stiff = a.k.vec().cwiseAbs().cwiseQuotient(box.k_max).maxCoeff();
  return -w.w_dis * progress - w.w_f * force * force - w.w_stf * stiff * stiff;
}

inline double reward(const Action& a, const State& next, const RewardWeights& w,
                     const ForceLimits& limits, const ActionLimits& box, Termination t) {
  return shaped_reward(a, next, w, limits, box) + terminal_bonus(t, w);
}

// Per-component affine maps between physical and unit-scaled coordinates:
// normalized = (value - offset) / scale.
class Normalizer {
 public:
  Normalizer() { *this = make(ActionLimits{}, ForceLimits{}); }
  Normalizer(StateVec s_offset, StateVec s_scale, ActionVec a_offset, ActionVec a_scale)
      : s_offset_(s_offset), s_scale_(s_scale), a_offset_(a_offset), a_scale_(a_scale) {
    if ((s_scale_.array() == 0.0).any() || (a_scale_.array() == 0.0).any() ||
        !s_scale_.allFinite() || !a_scale_.allFinite())
      throw ConfigError("normalizer scales must be finite and nonzero");
  }

  // e by e_scale, f by the force limits, df by df_factor times the limits, dx
  // by the reference-increment limits, xi unscaled. Actions map the box onto
  // [-1, 1]^6.
  static Normalizer make(const ActionLimits& box, const ForceLimits& limits,
                         Vec3 e_scale = Vec3(2.0e-3, 2.0e-3, deg2rad(4.0)),
                         double df_factor = 0.5) {
    StateVec scale;
    scale << e_scale, limits.vec(), df_factor * limits.vec(), box.dxd_max, 1.0;
    const ActionVec a_offset = 0.5 * (box.upper() + box.lower());
    const ActionVec a_scale = 0.5 * box.range();
    return Normalizer(StateVec::Zero(), scale, a_offset, a_scale);
  }

  StateVec normalize_state(const StateVec& s) const {
    return (s - s_offset_).cwiseQuotient(s_scale_);
  }
  StateVec denormalize_state(const StateVec& n) const {
    return n.cwiseProduct(s_scale_) + s_offset_;
  }
  ActionVec normalize_action(const ActionVec& a) const {
    return (a - a_offset_).cwiseQuotient(a_scale_);
  }
  ActionVec denormalize_action(const ActionVec& n) const {
    return n.cwiseProduct(a_scale_) + a_offset_;
  }

  const StateVec& state_offset() const { return s_offset_; }
  const StateVec& state_scale() const { return s_scale_; }
  const ActionVec& action_offset() const { return a_offset_; }
  const ActionVec& action_scale() const { return a_scale_; }

 private:
  StateVec s_offset_, s_scale_;
  ActionVec a_offset_, a_scale_;
};

// One environment step as stored for learning, in physical units.
struct Transition {
  StateVec s = StateVec::Zero();
  ActionVec a = ActionVec::Zero();
  double r = 0.0;
  StateVec s_next = StateVec::Zero();
  bool terminal = false;
  bool lppr_active = false;
  bool synthetic = false;
  ReductionFactor eps;
  int episode = 0;
  int t = 0;
};

// Assembles [e, f, df, dx, xi] from the previous and current pose/wrench.
inline State observe(const Pose& prev_x, const Wrench& prev_f, const Pose& x_d, const Pose& x,
                     const Wrench& f, const PegHoleGeometry& g) {
  State s;
  s.e = x_d.vec() - x.vec();
  s.f = f.vec();
  s.df = f.vec() - prev_f.vec();
  s.dx = x.vec() - prev_x.vec();
  s.xi = insertion_depth(x, g) / g.hole_depth;
  return s;
}

struct EnvConfig {
  PegHoleGeometry geom;
  ContactParams contact;
  ForceLimits limits;
  ActionLimits box;
  RewardWeights weights;
  int horizon = 100;
  double init_depth = 1.0e-3;
  double init_angle_range_deg = 3.0;
  double success_xi = 0.98;
  bool resume_from_recovered = false;
  // Optional Gaussian noise on the observed pose (m, m, rad); 0 disables it.
  Vec3 pose_noise_std = Vec3::Zero();
  // Lowest stiffness the robot realizes, as a fraction of k_max per axis.
  double min_stiffness_fraction = 0.01;

  Stiffness realized(const Stiffness& commanded) const {
    return Stiffness::from(commanded.vec().cwiseMax(min_stiffness_fraction * box.k_max));
  }

  Stiffness neutral_stiffness() const { return Stiffness::from(0.5 * box.k_max); }

  void validate() const {
    geom.validate();
    contact.validate();
    limits.validate();
    box.validate();
    weights.validate();
    if (horizon <= 0) throw ConfigError("horizon must be > 0");
    if (!(init_depth >= 0.0 && init_depth < geom.hole_depth))
      throw ConfigError("init_depth must lie in [0, hole_depth)");
    if (!(init_angle_range_deg >= 0.0)) throw ConfigError("init angle range must be >= 0");
    if (!(success_xi > 0.0 && success_xi <= 1.0)) throw ConfigError("success_xi in (0, 1]");
    if (!(pose_noise_std.array() >= 0.0).all()) throw ConfigError("pose noise must be >= 0");
    if (!(min_stiffness_fraction > 0.0 && min_stiffness_fraction <= 1.0))
      throw ConfigError("min_stiffness_fraction must lie in (0, 1]");
  }
};

struct StepResult {
  State next;
  double reward = 0.0;
  bool done = false;
  Termination termination = Termination::kNone;
  ExtendedAction u;
  Wrench measured;  // before LPPR
};

// One world per episode runner. The pose, reference and stiffness carry over
// between steps; the equilibrium solve is warm-started from the last pose.
class PegInHoleEnv {
 public:
  explicit PegInHoleEnv(EnvConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const EnvConfig& config() const { return cfg_; }

  // Samples the initial orientation error uniformly from the configured range.
  State reset(std::mt19937_64& rng) {
    if (cfg_.resume_from_recovered && last_overload_) return resume(rng);
    const double range = deg2rad(cfg_.init_angle_range_deg);
    double w0 = 0.0;
    if (range > 0.0) w0 = std::uniform_real_distribution<double>(-range, range)(rng);
    return reset_at_angle(w0, &rng);
  }

  // Tip centered in the mouth at the configured engaged depth with tilt w0.
  // If the tilted peg does not fit at that depth it is raised until it is
  // contact-free. Reference equals actual; stiffness is neutral.
  State reset_at_angle(double w0, std::mt19937_64* noise_rng = nullptr) {
    auto placed = [&](double depth) {
      return Pose{centered_tip_offset(depth, w0), -depth, w0};
    };
    auto free = [&](double depth) {
      return enumerate_contacts(placed(depth), cfg_.geom, cfg_.contact).empty();
    };
    double depth = cfg_.init_depth;
    if (!free(depth)) {
      double lo = depth, hi = depth;
      while (!free(hi) && hi > -cfg_.geom.peg_length) hi -= 0.25e-3;
      for (int i = 0; i < 60; ++i) {
        const double mid = 0.5 * (lo + hi);
        (free(mid) ? hi : lo) = mid;
      }
      depth = hi;
    }
    x_ = placed(depth);
    x_d_ = x_;
    k_ = cfg_.neutral_stiffness();
    f_ = Wrench{};
    prev_obs_x_ = observed_pose(noise_rng);
    t_ = 0;
    last_overload_ = false;
    state_ = observe(prev_obs_x_, f_, x_d_, prev_obs_x_, f_, cfg_.geom);
    return state_;
  }

  // Applies one extended action. The action is clamped to the box, the
  // reference advanced and the equilibrium re-solved. If the measured wrench
  // overloads any axis, LPPR contracts the reference and the world is
  // re-solved before observing. Propagates NonConvergence.
  StepResult step(const Action& requested, std::mt19937_64* noise_rng = nullptr) {
    const Action a = Action::from(cfg_.box.clamp(requested.vec()));
    const Wrench prev_f = f_;
    const Pose prev_obs = prev_obs_x_;
    const Pose prev_d = x_d_;
    const Stiffness prev_k = k_;

    x_d_ = Pose::from(x_d_.vec() + a.dxd);
    k_ = cfg_.realized(a.k);
    last_solve_ = solve_equilibrium_path(prev_d, prev_k, x_d_, k_, cfg_.geom, cfg_.contact, x_);
    x_ = last_solve_.pose;
    const Wrench measured = measured_wrench(x_d_, x_, k_);
    const ReductionFactor eps = lppr(measured, cfg_.limits);

    Pose obs_x = observed_pose(noise_rng);
    // Reward and overload are judged on the measurement that triggered LPPR.
    const State at_measure = observe(prev_obs, prev_f, x_d_, obs_x, measured, cfg_.geom);

    if (eps.active()) {
      const Pose overloaded_d = x_d_;
      x_d_ = contract_reference(x_d_, x_, eps);
      last_solve_ =
          solve_equilibrium_path(overloaded_d, k_, x_d_, k_, cfg_.geom, cfg_.contact, x_);
      x_ = last_solve_.pose;
      obs_x = observed_pose(noise_rng);
    }
    f_ = measured_wrench(x_d_, x_, k_);
    state_ = observe(prev_obs, prev_f, x_d_, obs_x, f_, cfg_.geom);
    prev_obs_x_ = obs_x;
    ++t_;

    StepResult out;
    out.u = {a, eps};
    out.measured = measured;
    out.next = state_;
    if (eps.active()) {
      out.termination = Termination::kOverload;
    } else if (state_.xi > cfg_.success_xi) {
      out.termination = Termination::kSuccess;
    }
    out.reward = reward(a, at_measure, cfg_.weights, cfg_.limits, cfg_.box, out.termination);
    out.done = out.termination != Termination::kNone || t_ >= cfg_.horizon;
    last_overload_ = out.termination == Termination::kOverload;
    return out;
  }

  const State& state() const { return state_; }
  const Pose& pose() const { return x_; }
  const Pose& reference() const { return x_d_; }
  const Stiffness& stiffness() const { return k_; }
  const Wrench& wrench() const { return f_; }
  int t() const { return t_; }
  // Final equilibrium solve of the last step.
  const EquilibriumReport& last_solve() const { return last_solve_; }

 private:
  State resume(std::mt19937_64& rng) {
    prev_obs_x_ = observed_pose(&rng);
    t_ = 0;
    last_overload_ = false;
    state_ = observe(prev_obs_x_, f_, x_d_, prev_obs_x_, f_, cfg_.geom);
    return state_;
  }

  Pose observed_pose(std::mt19937_64* rng) const {
    if (rng == nullptr || cfg_.pose_noise_std.isZero()) return x_;
    Pose p = x_;
    std::normal_distribution<double> n(0.0, 1.0);
    p.x += cfg_.pose_noise_std[0] * n(*rng);
    p.y += cfg_.pose_noise_std[1] * n(*rng);
    p.w += cfg_.pose_noise_std[2] * n(*rng);
    return p;
  }

  EnvConfig cfg_;
  Pose x_, x_d_;
  Stiffness k_;
  Wrench f_;
  Pose prev_obs_x_;
  State state_;
  int t_ = 0;
  bool last_overload_ = false;
  EquilibriumReport last_solve_;
};

}  // namespace pegrl
