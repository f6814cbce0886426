#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pegrl/mpc.hpp"

using namespace pegrl;
using oracle::LinearModel;

namespace {

// s' = [a; 0].
LinearModel action_passthrough() {
  LinearModel m;
  m.B.topRows<kActionDim>() = ActionMat::Identity();
  return m;
}

}  // namespace

TEST(Quadratize, ExactForQuadraticCost) {
  const LinearModel m = action_passthrough();
  ActionVec target;
  target << 0.3, -0.2, 0.1, 0.5, -0.7, 0.0;
  auto cost = [&](const ActionVec&, const StateVec& s) {
    return (s.head<kActionDim>() - target).squaredNorm();
  };
  ActionVec nom;
  nom << -0.1, 0.4, 0.2, 0.0, 0.3, -0.5;
  const QuadraticExpansion q = quadratize(StateVec::Zero(), m, cost, nom);
  const ActionVec g = 2.0 * (nom - target);
  EXPECT_LT((q.gradient - g).norm(), 1e-6 * g.norm());
  EXPECT_LT((q.hessian - 2.0 * ActionMat::Identity()).norm(), 1e-6 * 2.0);
}

TEST(Quadratize, OneSidedDifferencesAgree) {
  std::mt19937_64 rng(3);
  const auto p = oracle::random_lq(rng);
  ActionVec nom = 0.2 * ActionVec::Ones();
  const QuadraticExpansion q = quadratize(p.s, p.model, p.cost, nom);
  const double h = 1e-6;
  for (int i = 0; i < kActionDim; ++i) {
    ActionVec ap = nom;
    ap[i] += h;
    const double fwd = (p.cost(ap, p.model.mean(p.s, ap)) - q.value) / h;
    EXPECT_NEAR(fwd, q.gradient[i], 1e-4 * (1.0 + std::abs(fwd)));
  }
}

TEST(Quadratize, IndefiniteHessianIsFloored) {
  const LinearModel m = action_passthrough();
  auto saddle = [](const ActionVec&, const StateVec& s) {
    return (s[0] - 0.2) * (s[0] - 0.2) - 0.5 * (s[1] - 0.1) * (s[1] - 0.1);
  };
  const QuadraticExpansion q = quadratize(StateVec::Zero(), m, saddle, ActionVec::Zero(), 1e-4, 1e-3);
  const Eigen::SelfAdjointEigenSolver<ActionMat> eig(q.hessian);
  EXPECT_GE(eig.eigenvalues().minCoeff(), 1e-3 - 1e-12);
  EXPECT_LT((q.hessian - q.hessian.transpose()).norm(), 1e-15);
  const MpcResult r = ilqg_one_step(StateVec::Zero(), m, saddle, MpcPolicy{}, ActionVec::Zero());
  EXPECT_LT(r.final_cost, r.initial_cost);
}

TEST(Ilqg, ClampsMonotoneCost) {
  const LinearModel m = action_passthrough();
  auto far = [](const ActionVec&, const StateVec& s) { return (s[0] - 3.0) * (s[0] - 3.0); };
  const MpcResult r = ilqg_one_step(StateVec::Zero(), m, far, MpcPolicy{}, ActionVec::Zero());
  EXPECT_DOUBLE_EQ(r.action[0], 1.0);
  auto near = [](const ActionVec&, const StateVec& s) { return (s[0] - 0.5) * (s[0] - 0.5); };
  const MpcResult r2 = ilqg_one_step(StateVec::Zero(), m, near, MpcPolicy{}, ActionVec::Zero());
  EXPECT_NEAR(r2.action[0], 0.5, 1e-6);
}

TEST(Ilqg, MatchesGridSearchOnRandomLinearQuadratic) {
  std::mt19937_64 rng(101);
  const ActionVec lo = -ActionVec::Ones(), hi = ActionVec::Ones();
  int on_boundary = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = oracle::random_lq(rng);
    auto f = [&](const ActionVec& a) { return p.cost(a, p.model.mean(p.s, a)); };
    const ActionVec grid = oracle::nested_grid_search(f, lo, hi);
    const MpcResult r = ilqg_one_step(p.s, p.model, p.cost, MpcPolicy{}, ActionVec::Zero());
    EXPECT_LT((r.action - grid).cwiseAbs().maxCoeff(), 1e-3) << "trial " << trial;
    on_boundary += (r.action.cwiseAbs().array() > 1.0 - 1e-9).any();
  }
  EXPECT_GT(on_boundary, 0);
}

TEST(Ilqg, StaysInBoxAndNeverIncreasesModelCost) {
  std::mt19937_64 rng(7);
  const EnvConfig env;
  const Normalizer norm;
  const StepCost cost{env.weights, env.limits, env.box, norm};
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const auto w = oracle::random_window(rng, 5);
    FittingBuffer buf(5);
    for (const auto& s : w) buf.push(s);
    ActionVec a0;
    for (auto& v : a0) v = u(rng);
    const LocalModel model = local_model(buf, KlmfConfig{}, norm, a0);
    const MpcResult r = ilqg_one_step(w.back().s_next, model, cost, MpcPolicy{}, a0);
    EXPECT_LE(r.action.cwiseAbs().maxCoeff(), 1.0);
    EXPECT_LE(r.final_cost, r.initial_cost);
    const MpcResult again = ilqg_one_step(w.back().s_next, model, cost, MpcPolicy{}, a0);
    EXPECT_EQ(again.action, r.action);
  }
}

TEST(StepCost, NegatedRewardWithoutBonus) {
  const EnvConfig env;
  const Normalizer norm;
  const StepCost cost{env.weights, env.limits, env.box, norm};
  Action a;
  a.k = {1000.0, 2000.0, 10.0};
  State s;
  s.dx = {0.0, -5e-4, 0.0};
  s.f = {1.0, -20.0, 0.5};
  const double r = reward(a, s, env.weights, env.limits, env.box, Termination::kNone);
  EXPECT_NEAR(cost(norm.normalize_action(a.vec()), norm.normalize_state(s.vec())), -r, 1e-12);
}

TEST(Explore, NoiseMomentsAndBox) {
  const ActionLimits box;
  const ActionVec center = 0.5 * (box.lower() + box.upper());
  std::mt19937_64 rng(5);
  EXPECT_EQ(explore(center, box, 0.0, rng), center);

  // Noise is drawn before clamping, so the pre-clamp spread is recovered by
  // adding the same draws to the nominal.
  std::mt19937_64 a(9), b(9);
  std::normal_distribution<double> n(0.0, 1.0);
  const int draws = 100000;
  ActionVec sum = ActionVec::Zero(), sq = ActionVec::Zero();
  for (int i = 0; i < draws; ++i) {
    const ActionVec out = explore(center, box, 0.1, a);
    EXPECT_TRUE(box.contains(out));
    ActionVec raw;
    for (int j = 0; j < kActionDim; ++j) raw[j] = 0.1 * box.range()[j] * n(b);
    sum += raw;
    sq += raw.cwiseProduct(raw);
    const ActionVec expected = box.clamp(center + raw);
    ASSERT_EQ(out, expected);
  }
  const ActionVec mean = sum / draws;
  const ActionVec sd = (sq / draws - mean.cwiseProduct(mean)).cwiseSqrt();
  for (int j = 0; j < kActionDim; ++j) {
    EXPECT_NEAR(sd[j] / (0.1 * box.range()[j]), 1.0, 0.02);
  }
}

TEST(MpcPolicy, Validation) {
  MpcPolicy p;
  p.max_iters = 0;
  EXPECT_THROW(p.validate(), ConfigError);
  MpcPolicy q;
  q.noise_fraction = -0.1;
  EXPECT_THROW(q.validate(), ConfigError);
}
