#pragma once

// One-step iLQG exploration policy.
//
// With a horizon of one transition the backward pass reduces to minimizing
// c(a, model(s, a)) over the action box. Each iteration quadratizes the
// composite cost at the nominal action by central differences, solves the
// box-constrained Newton subproblem, backtracks on the true model cost and
// re-linearizes the model at the accepted nominal. Everything here works in
// normalized action coordinates, where the box is [-1, 1]^6.

#include <algorithm>
#include <concepts>
#include <random>

#include "pegrl/klmf.hpp"

namespace pegrl {

using ActionMat = Eigen::Matrix<double, kActionDim, kActionDim>;

template <typename M>
concept OneStepModel = requires(M m, const M& cm, const StateVec& s, const ActionVec& a) {
  { cm.mean(s, a) } -> std::convertible_to<StateVec>;
  m.relinearize(a);
};

template <typename C>
concept StepCostFn = requires(const C& c, const ActionVec& a, const StateVec& s) {
  { c(a, s) } -> std::convertible_to<double>;
};

// c(a, s') = -r(a, s') without terminal bonuses, evaluated on normalized
// action and predicted next state.
struct StepCost {
  RewardWeights weights;
  ForceLimits limits;
  ActionLimits box;
  Normalizer norm;

  double physical(const ActionVec& a, const StateVec& s_next) const {
    return -shaped_reward(Action::from(a), State::from(s_next), weights, limits, box);
  }
  double operator()(const ActionVec& a_n, const StateVec& s_next_n) const {
    return physical(norm.denormalize_action(a_n), norm.denormalize_state(s_next_n));
  }
};

struct QuadraticExpansion {
  double value = 0.0;
  ActionVec gradient = ActionVec::Zero();
  ActionMat hessian = ActionMat::Zero();
};

struct MpcPolicy {
  int max_iters = 20;
  double tolerance = 1e-6;
  double hessian_floor = 1e-6;
  double fd_step = 1e-4;
  // Exploration noise std as a fraction of each action component's range.
  double noise_fraction = 0.1;

  void validate() const {
    if (max_iters <= 0) throw ConfigError("mpc: max_iters must be > 0");
    if (!(tolerance > 0.0 && hessian_floor > 0.0 && fd_step > 0.0))
      throw ConfigError("mpc: tolerance, hessian floor and fd step must be > 0");
    if (!(noise_fraction >= 0.0)) throw ConfigError("mpc: noise fraction must be >= 0");
  }
};

// Symmetrizes and raises every eigenvalue to at least `floor`.
inline ActionMat floor_eigenvalues(const ActionMat& h, double floor) {
  const ActionMat sym = 0.5 * (h + h.transpose());
  const Eigen::SelfAdjointEigenSolver<ActionMat> eig(sym);
  const ActionVec vals = eig.eigenvalues().cwiseMax(floor);
  return eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
}

template <typename Model, typename Cost>
  requires OneStepModel<Model> && StepCostFn<Cost>
QuadraticExpansion quadratize(const StateVec& s, const Model& model, const Cost& cost,
                              const ActionVec& a_nom, double fd_step = 1e-4,
                              double hessian_floor = 1e-6) {
  auto g = [&](const ActionVec& a) { return cost(a, model.mean(s, a)); };
  const double h = fd_step;
  QuadraticExpansion q;
  q.value = g(a_nom);
  ActionVec plus, minus;
  for (int i = 0; i < kActionDim; ++i) {
    ActionVec ap = a_nom, am = a_nom;
    ap[i] += h;
    am[i] -= h;
    plus[i] = g(ap);
    minus[i] = g(am);
    q.gradient[i] = (plus[i] - minus[i]) / (2.0 * h);
    q.hessian(i, i) = (plus[i] - 2.0 * q.value + minus[i]) / (h * h);
  }
  for (int i = 0; i < kActionDim; ++i) {
    for (int j = i + 1; j < kActionDim; ++j) {
      ActionVec app = a_nom, apm = a_nom, amp = a_nom, amm = a_nom;
      app[i] += h, app[j] += h;
      apm[i] += h, apm[j] -= h;
      amp[i] -= h, amp[j] += h;
      amm[i] -= h, amm[j] -= h;
      const double hij = (g(app) - g(apm) - g(amp) + g(amm)) / (4.0 * h * h);
      q.hessian(i, j) = hij;
      q.hessian(j, i) = hij;
    }
  }
  q.hessian = floor_eigenvalues(q.hessian, hessian_floor);
  return q;
}

// Minimizes g'd + 1/2 d'Hd subject to lower <= x0 + d <= upper for positive
// definite H by a projected Newton iteration over the free set. Returns x0 + d.
inline ActionVec solve_box_qp(const ActionMat& H, const ActionVec& g, const ActionVec& x0,
                              const ActionVec& lower, const ActionVec& upper,
                              int max_iters = 100) {
  auto objective = [&](const ActionVec& x) {
    const ActionVec d = x - x0;
    return g.dot(d) + 0.5 * d.dot(H * d);
  };
  ActionVec x = x0.cwiseMax(lower).cwiseMin(upper);
  double value = objective(x);
  for (int it = 0; it < max_iters; ++it) {
    const ActionVec grad = g + H * (x - x0);
    Eigen::Array<bool, kActionDim, 1> free;
    for (int i = 0; i < kActionDim; ++i) {
      const bool at_lo = x[i] <= lower[i] && grad[i] > 0.0;
      const bool at_hi = x[i] >= upper[i] && grad[i] < 0.0;
      free[i] = !(at_lo || at_hi);
    }
    ActionVec step = ActionVec::Zero();
    const int nf = free.count();
    if (nf == 0) break;
    Eigen::MatrixXd hf(nf, nf);
    Eigen::VectorXd gf(nf);
    std::array<int, kActionDim> idx{};
    for (int i = 0, k = 0; i < kActionDim; ++i)
      if (free[i]) idx[k++] = i;
    for (int a = 0; a < nf; ++a) {
      gf[a] = grad[idx[a]];
      for (int b = 0; b < nf; ++b) hf(a, b) = H(idx[a], idx[b]);
    }
    const Eigen::VectorXd sf = hf.ldlt().solve(-gf);
    for (int a = 0; a < nf; ++a) step[idx[a]] = sf[a];
    if (step.cwiseAbs().maxCoeff() < 1e-14) break;

    bool accepted = false;
    for (double alpha = 1.0; alpha > 1e-12; alpha *= 0.5) {
      const ActionVec cand = (x + alpha * step).cwiseMax(lower).cwiseMin(upper);
      const double v = objective(cand);
      if (v < value) {
        const double gain = value - v;
        x = cand;
        value = v;
        accepted = true;
        if (gain < 1e-16 * (1.0 + std::abs(value))) it = max_iters;
        break;
      }
    }
    if (!accepted) break;
  }
  return x;
}

struct MpcResult {
  ActionVec action = ActionVec::Zero();  // normalized
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
};

// Box-constrained one-step iLQG from the nominal `a_init` (normalized). The
// returned action lies in [lower, upper] and its model cost never exceeds
// the initial nominal's under the linearization it was accepted with.
template <typename Model, typename Cost>
  requires OneStepModel<Model> && StepCostFn<Cost>
MpcResult ilqg_one_step(const StateVec& s, Model model, const Cost& cost, const MpcPolicy& policy,
                        const ActionVec& a_init, const ActionVec& lower = -ActionVec::Ones(),
                        const ActionVec& upper = ActionVec::Ones()) {
  MpcResult out;
  // Cost with the model linearized at the action itself.
  auto evaluate = [&](const ActionVec& x) {
    Model m = model;
    m.relinearize(x);
    return cost(x, m.mean(s, x));
  };
  ActionVec a = a_init.cwiseMax(lower).cwiseMin(upper);
  model.relinearize(a);
  double value = cost(a, model.mean(s, a));
  out.initial_cost = value;
  int it = 0;
  for (; it < policy.max_iters; ++it) {
    const QuadraticExpansion q =
        quadratize(s, model, cost, a, policy.fd_step, policy.hessian_floor);
    const ActionVec target = solve_box_qp(q.hessian, q.gradient, a, lower, upper);
    const ActionVec step = target - a;
    if (step.cwiseAbs().maxCoeff() < policy.tolerance) break;

    bool accepted = false;
    for (double alpha = 1.0; alpha > 1e-6; alpha *= 0.5) {
      const ActionVec cand = a + alpha * step;
      const double v = evaluate(cand);
      if (v < value) {
        a = cand;
        value = v;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    model.relinearize(a);
  }
  out.action = a;
  out.final_cost = value;
  out.iterations = it;
  return out;
}

// Adds N(0, (fraction * range_i)^2) to each component and clamps to the box.
inline ActionVec explore(const ActionVec& a_star, const ActionLimits& box, double noise_fraction,
                         std::mt19937_64& rng) {
  if (noise_fraction == 0.0) return box.clamp(a_star);
  std::normal_distribution<double> n(0.0, 1.0);
  const ActionVec range = box.range();
  ActionVec out = a_star;
  for (int i = 0; i < kActionDim; ++i) out[i] += noise_fraction * range[i] * n(rng);
  return box.clamp(out);
}

}  // namespace pegrl
