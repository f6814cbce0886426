#include <random>

#include <gtest/gtest.h>

#include "pegrl/sim.hpp"

using namespace pegrl;

namespace {

ContactParams frictionless() {
  ContactParams p;
  p.mu = 0.0;
  return p;
}

// Minimizes 1/2 k (y - y_d)^2 + 1/2 k_env min(0, y - floor)^2 by bisection
// on its derivative.
double press_oracle(double y_d, double k, double k_env, double floor) {
  auto grad = [&](double y) { return k * (y - y_d) + k_env * std::min(0.0, y - floor); };
  double lo = y_d, hi = floor + 1.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (grad(mid) > 0.0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

Pose random_pose(std::mt19937_64& rng, const PegHoleGeometry& g) {
  std::uniform_real_distribution<double> ux(-2e-3, 2e-3), uy(-g.hole_depth - 20e-6, 1e-3),
      uw(-deg2rad(4.0), deg2rad(4.0));
  return {ux(rng), uy(rng), uw(rng)};
}

}  // namespace

TEST(ContactWrench, ZeroAboveMouth) {
  const PegHoleGeometry g;
  EXPECT_EQ(contact_wrench({0.0, 1e-3, 0.0}, g, ContactParams{}), Wrench{});
  EXPECT_EQ(contact_wrench({0.0, -10e-3, 0.0}, g, ContactParams{}), Wrench{});
}

TEST(ContactWrench, FloorPenetrationIsPenaltyForce) {
  const PegHoleGeometry g;
  const Wrench f = contact_wrench({0.0, -g.hole_depth - 4.0e-6, 0.0}, g, frictionless());
  EXPECT_NEAR(f.fy, 4.0, 1e-9);
  EXPECT_NEAR(f.fx, 0.0, 1e-12);
  EXPECT_NEAR(f.mw, 0.0, 1e-12);
}

TEST(ContactWrench, MirrorSymmetry) {
  const PegHoleGeometry g;
  std::mt19937_64 rng(11);
  int touching = 0;
  for (int i = 0; i < 1000; ++i) {
    const Pose p = random_pose(rng, g);
    const Pose ref = random_pose(rng, g);
    const Pose ref_m = ref.mirrored();
    for (double mu : {0.0, 0.3}) {
      ContactParams c;
      c.mu = mu;
      const Wrench a = contact_wrench(p, g, c, &ref);
      const Wrench b = contact_wrench(p.mirrored(), g, c, &ref_m);
      const double scale = 1e-9 * (1.0 + a.vec().cwiseAbs().maxCoeff());
      EXPECT_LT((a.mirrored().vec() - b.vec()).cwiseAbs().maxCoeff(), scale);
      touching += a.vec().squaredNorm() > 0.0;
    }
  }
  EXPECT_GT(touching, 200);
}

TEST(MeasuredWrench, SpringLaw) {
  const Stiffness k{1000.0, 4000.0, 50.0};
  EXPECT_EQ(measured_wrench({1, 2, 3}, {1, 2, 3}, k), Wrench{});
  const Wrench f = measured_wrench({0.0, 1e-3, 0.0}, {}, k);
  EXPECT_NEAR(f.fy, 4.0, 1e-12);
  EXPECT_EQ(f.fx, 0.0);
  const Wrench f2 = measured_wrench({0.0, 2e-3, 0.0}, {}, k);
  EXPECT_NEAR(f2.fy, 2.0 * f.fy, 1e-12);
}

TEST(InsertionDepth, ClampedToHole) {
  const PegHoleGeometry g;
  EXPECT_EQ(insertion_depth({0, 0, 0}, g), 0.0);
  EXPECT_EQ(insertion_depth({0, 5e-3, 0}, g), 0.0);
  EXPECT_DOUBLE_EQ(insertion_depth({0, -18e-3, 0}, g), 18e-3);
  EXPECT_DOUBLE_EQ(insertion_depth({0, -36e-3, 0}, g) / g.hole_depth, 1.0);
  EXPECT_DOUBLE_EQ(insertion_depth({0, -40e-3, 0}, g), g.hole_depth);
}

TEST(Equilibrium, FreeSpaceRestsAtReference) {
  const PegHoleGeometry g;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ux(-30e-3, 30e-3), uy(1e-3, 20e-3), uw(-0.3, 0.3),
      uk(10.0, 4000.0);
  int tested = 0;
  while (tested < 200) {
    const Pose x_d{ux(rng), uy(rng), uw(rng)};
    // A tilted peg can reach below the mouth with its tip above it.
    if (!enumerate_contacts(x_d, g, ContactParams{}).empty()) continue;
    ++tested;
    const Stiffness k{uk(rng), uk(rng), uk(rng) / 20.0};
    const Pose start{x_d.x + 1e-4, x_d.y + 1e-4, x_d.w};
    const auto rep = solve_equilibrium_report(x_d, k, g, ContactParams{}, start);
    EXPECT_NEAR(rep.pose.x, x_d.x, 1e-9);
    EXPECT_NEAR(rep.pose.y, x_d.y, 1e-9);
    EXPECT_NEAR(rep.pose.w, x_d.w, 1e-9);
  }
}

TEST(Equilibrium, AxialPressMatchesEnergyMinimum) {
  const PegHoleGeometry g;
  const ContactParams c = frictionless();
  const Stiffness k{4000.0, 4000.0, 100.0};
  const double floor = -g.hole_depth;
  const Pose x_d{0.0, floor - 1e-3, 0.0};
  const Pose start{0.0, floor + 1e-4, 0.0};
  const Pose x = solve_equilibrium_path(start, k, x_d, k, g, c, start).pose;
  const double y_star = press_oracle(x_d.y, k.ky, c.k_env, floor);
  EXPECT_NEAR(x.y - floor, y_star - floor, 1e-9);
  EXPECT_NEAR(x.y - floor, -3.984e-6, 1e-9);
  EXPECT_NEAR(measured_wrench(x_d, x, k).fy, -3.984, 1e-3);
}

TEST(Equilibrium, ResidualBelowToleranceAndMirrored) {
  const PegHoleGeometry g;
  const ContactParams c;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ud(-1e-3, 1e-3), uw(-deg2rad(2.0), deg2rad(2.0)),
      uk(40.0, 4000.0), ukw(2.0, 200.0);
  for (int i = 0; i < 40; ++i) {
    const double w0 = uw(rng);
    const Pose start{centered_tip_offset(2e-3, w0), -2e-3, w0};
    const Stiffness k{uk(rng), uk(rng), ukw(rng)};
    Pose x_d = start, x = start, xm = start.mirrored();
    for (int t = 0; t < 5; ++t) {
      const Pose next_d{x_d.x + ud(rng), x_d.y - std::abs(ud(rng)), x_d.w + uw(rng) / 2.0};
      const auto rep = solve_equilibrium_path(x_d, k, next_d, k, g, c, x);
      const auto mir =
          solve_equilibrium_path(x_d.mirrored(), k, next_d.mirrored(), k, g, c, xm);
      EXPECT_LT(rep.residual, c.solver_tol);
      const Vec3 balance = measured_wrench(next_d, rep.pose, k).vec() +
                           contact_wrench(rep.pose, g, c, &rep.slip_reference).vec();
      EXPECT_LT(balance.cwiseAbs().maxCoeff(), c.solver_tol);
      EXPECT_NEAR(mir.pose.x, -rep.pose.x, 1e-7);
      EXPECT_NEAR(mir.pose.y, rep.pose.y, 1e-7);
      EXPECT_NEAR(mir.pose.w, -rep.pose.w, 1e-6);
      x_d = next_d;
      x = rep.pose;
      xm = mir.pose;
    }
  }
}

TEST(Equilibrium, Deterministic) {
  const PegHoleGeometry g;
  const ContactParams c;
  const Stiffness k{2000.0, 3000.0, 20.0};
  const Pose start{centered_tip_offset(1e-3, 0.03), -1e-3, 0.03};
  const Pose x_d{start.x + 2e-4, start.y - 3e-3, start.w - 0.01};
  const auto a = solve_equilibrium_path(start, k, x_d, k, g, c, start);
  const auto b = solve_equilibrium_path(start, k, x_d, k, g, c, start);
  EXPECT_EQ(a.pose, b.pose);
}

TEST(Geometry, RejectsInvalid) {
  PegHoleGeometry g;
  g.peg_width = g.hole_width;
  EXPECT_THROW(g.validate(), ConfigError);
  ContactParams c;
  c.mu = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}
