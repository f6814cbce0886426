#include <random>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pegrl/ddpg.hpp"

using namespace pegrl;

namespace {

Experience exp_with(double r, bool synthetic = false) {
  Experience e;
  e.r = r;
  e.synthetic = synthetic;
  return e;
}

}  // namespace

TEST(Mlp, ActorGradientsMatchFiniteDifferences) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto st =
        oracle::mlp_gradient_check(seed, OutputActivation::kTanh, kStateDim, 16, kActionDim);
    EXPECT_LT(st.worst, 1e-4) << "seed " << seed;
    EXPECT_LT(st.skipped, st.checked / 100 + 1);
  }
}

TEST(Mlp, CriticGradientsMatchFiniteDifferences) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto st = oracle::mlp_gradient_check(seed, OutputActivation::kLinear, kInputDim, 16, 1);
    EXPECT_LT(st.worst, 1e-4) << "seed " << seed;
    EXPECT_LT(st.skipped, st.checked / 100 + 1);
  }
}

TEST(Mlp, PreActivationUpstreamAddsToGradient) {
  std::mt19937_64 rng(13);
  Mlp net({3, 5, 2}, OutputActivation::kTanh);
  net.init(rng, 0.8);
  const Matrix x = Matrix::Random(3, 2), up = Matrix::Random(2, 2), pre = Matrix::Random(2, 2);
  auto total = [&](const Mlp& n) {
    Mlp::Cache c;
    const double out = n.forward(x, &c).cwiseProduct(up).sum();
    return out + c.pre.back().cwiseProduct(pre).sum();
  };
  Mlp::Cache c;
  net.forward(x, &c);
  const auto g = net.backward(c, up, &pre);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < net.layers()[0].W.size(); ++i) {
    Mlp p = net, m = net;
    p.layers()[0].W.data()[i] += h;
    m.layers()[0].W.data()[i] -= h;
    const double fd = (total(p) - total(m)) / (2 * h);
    EXPECT_NEAR(g.layers[0].W.data()[i], fd, 1e-7 * (1.0 + std::abs(fd)));
  }
}

TEST(Mlp, ShapeErrors) {
  EXPECT_THROW(Mlp({3}, OutputActivation::kLinear), ShapeMismatch);
  Mlp net({3, 4, 2}, OutputActivation::kLinear);
  EXPECT_THROW(net.forward(Matrix::Zero(2, 1)), ShapeMismatch);
  Mlp other({3, 5, 2}, OutputActivation::kLinear);
  EXPECT_THROW(soft_update(net, other, 0.5), ShapeMismatch);
}

TEST(Mlp, InitBounds) {
  std::mt19937_64 rng(4);
  Mlp net({kStateDim, 64, 64, kActionDim}, OutputActivation::kTanh);
  net.init(rng, 3e-3);
  EXPECT_LE(net.layers()[0].W.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(double(kStateDim)));
  EXPECT_LE(net.layers()[1].W.cwiseAbs().maxCoeff(), 1.0 / 8.0);
  EXPECT_LE(net.layers()[2].W.cwiseAbs().maxCoeff(), 3e-3);
  EXPECT_LE(net.layers()[2].b.cwiseAbs().maxCoeff(), 3e-3);
}

TEST(Adam, FirstStepsMatchClosedForm) {
  Mlp net({1, 1}, OutputActivation::kLinear);
  net.layers()[0].W(0, 0) = 0.5;
  Adam opt(net, {0.1});
  std::vector<Layer> g{{Matrix::Constant(1, 1, 2.0), Vector::Constant(1, -3.0)}};
  opt.step(net, g);
  EXPECT_NEAR(net.layers()[0].W(0, 0), 0.5 - 0.1 * 2.0 / (2.0 + 1e-8), 1e-15);
  EXPECT_NEAR(net.layers()[0].b[0], 0.1 * 3.0 / (3.0 + 1e-8), 1e-15);

  // Second step with a different gradient, moments by hand.
  const double g1 = 2.0, g2 = -1.0;
  const double m = 0.9 * (0.1 * g1) + 0.1 * g2;
  const double v = 0.999 * (0.001 * g1 * g1) + 0.001 * g2 * g2;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  const double w_before = net.layers()[0].W(0, 0);
  g[0].W(0, 0) = g2;
  opt.step(net, g);
  EXPECT_NEAR(net.layers()[0].W(0, 0), w_before - 0.1 * mh / (std::sqrt(vh) + 1e-8), 1e-15);
  EXPECT_EQ(opt.steps(), 2);
}

TEST(SoftUpdate, Interpolates) {
  std::mt19937_64 rng(6);
  Mlp a({3, 4, 2}, OutputActivation::kLinear), b = a;
  a.init(rng);
  b.init(rng);
  Mlp t = b;
  soft_update(t, a, 0.25);
  EXPECT_LT((t.layers()[1].W - (0.25 * a.layers()[1].W + 0.75 * b.layers()[1].W)).norm(), 1e-15);
  soft_update(t, a, 1.0);
  EXPECT_EQ(t.layers()[0].W, a.layers()[0].W);
}

TEST(Replay, FifoEvictionAndSyntheticCount) {
  ReplayBuffer buf(3);
  for (int i = 0; i < 5; ++i) buf.push(exp_with(i, i % 2 == 0));
  EXPECT_EQ(buf.size(), 3u);
  EXPECT_EQ(buf[0].r, 2.0);
  EXPECT_EQ(buf[2].r, 4.0);
  EXPECT_EQ(buf.synthetic_count(), 2u);
  buf.push(exp_with(5));
  EXPECT_EQ(buf.synthetic_count(), 1u);
  EXPECT_THROW(ReplayBuffer(0), ConfigError);
}

TEST(Replay, SamplesWithoutReplacementUniformly) {
  ReplayBuffer buf(50);
  for (int i = 0; i < 50; ++i) buf.push(exp_with(i));
  std::mt19937_64 rng(8);
  std::vector<int> hits(50, 0);
  const int rounds = 20000;
  for (int r = 0; r < rounds; ++r) {
    const auto idx = buf.sample_indices(10, rng);
    const std::set<std::size_t> uniq(idx.begin(), idx.end());
    ASSERT_EQ(uniq.size(), 10u);
    for (auto i : idx) {
      ASSERT_LT(i, 50u);
      ++hits[i];
    }
  }
  // Each index appears with probability 1/5 per draw.
  for (int h : hits) EXPECT_NEAR(h / double(rounds), 0.2, 0.015);
  EXPECT_THROW(buf.sample_indices(51, rng), InsufficientBuffer);
}

TEST(Ddpg, TdTargets) {
  std::mt19937_64 rng(1);
  DdpgAgent agent(DdpgConfig{}, rng);
  auto& q = agent.critic_target();
  for (auto& l : q.layers()) {
    l.W.setZero();
    l.b.setZero();
  }
  q.layers().back().b[0] = 2.0;
  Experience cont = exp_with(0.0), term = exp_with(-1.5);
  term.terminal = true;
  const Vector y = agent.td_targets({&cont, &term});
  EXPECT_NEAR(y[0], 1.98, 1e-15);
  EXPECT_EQ(y[1], -1.5);
}

TEST(Ddpg, UpdateReducesCriticLossOnFixedBatch) {
  std::mt19937_64 rng(2);
  DdpgConfig cfg;
  cfg.critic_lr = 1e-3;
  cfg.batch_size = 32;
  DdpgAgent agent(cfg, rng);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Experience> data(32);
  for (auto& e : data) {
    for (auto& v : e.s) v = g(rng);
    for (auto& v : e.a) v = std::tanh(g(rng));
    e.s_next = e.s;
    e.r = e.a[0];
    e.terminal = true;
  }
  std::vector<const Experience*> batch;
  for (const auto& e : data) batch.push_back(&e);
  const double first = agent.update_batch(batch).critic;
  double last = first;
  for (int i = 0; i < 300; ++i) last = agent.update_batch(batch).critic;
  EXPECT_LT(last, 0.2 * first);
  EXPECT_LE(agent.act(data[0].s).cwiseAbs().maxCoeff(), 1.0);
}

TEST(Ddpg, UpdateNeedsFullMinibatch) {
  std::mt19937_64 rng(3);
  DdpgAgent agent(DdpgConfig{}, rng);
  ReplayBuffer buf(200);
  for (int i = 0; i < 99; ++i) buf.push(exp_with(0.0));
  EXPECT_THROW(agent.update(buf, rng), InsufficientBuffer);
  buf.push(exp_with(0.0));
  EXPECT_NO_THROW(agent.update(buf, rng));
}

TEST(Ddpg, ConfigValidation) {
  DdpgConfig c;
  c.gamma = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  DdpgConfig d;
  d.batch_size = 10000;
  EXPECT_THROW(d.validate(), ConfigError);
  DdpgConfig e;
  e.tau = 0.0;
  EXPECT_THROW(e.validate(), ConfigError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  std::mt19937_64 rng(4);
  DdpgAgent agent(DdpgConfig{}, rng);
  std::stringstream ss;
  checkpoint::write(ss, {{"actor", agent.actor()}, {"critic", agent.critic()}});
  const auto nets = checkpoint::read(ss);
  ASSERT_EQ(nets.size(), 2u);
  EXPECT_EQ(nets[0].name, "actor");
  EXPECT_EQ(nets[1].net.output_activation(), OutputActivation::kLinear);
  for (std::size_t l = 0; l < 3; ++l) {
    EXPECT_EQ(nets[0].net.layers()[l].W, agent.actor().layers()[l].W);
    EXPECT_EQ(nets[0].net.layers()[l].b, agent.actor().layers()[l].b);
    EXPECT_EQ(nets[1].net.layers()[l].W, agent.critic().layers()[l].W);
  }
  StateVec s = StateVec::Constant(0.3);
  EXPECT_EQ(nets[0].net.forward_one(s), agent.act(s));
}

TEST(Checkpoint, RejectsCorruptOrMismatched) {
  std::mt19937_64 rng(5);
  DdpgAgent agent(DdpgConfig{}, rng);
  std::stringstream full;
  checkpoint::write(full, {{"actor", agent.actor()}});
  const std::string bytes = full.str();

  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(checkpoint::read(truncated), CheckpointMismatch);
  std::string bad = bytes;
  bad[0] = 'X';
  std::stringstream magic(bad);
  EXPECT_THROW(checkpoint::read(magic), CheckpointMismatch);

  const std::string dir = ::testing::TempDir();
  const std::string wrong = dir + "/wrong_actor.bin";
  {
    std::ofstream os(wrong, std::ios::binary);
    checkpoint::write(os, {{"actor", agent.critic()}});
  }
  EXPECT_THROW(checkpoint::load_actor(wrong), CheckpointMismatch);
  const std::string good = dir + "/good_actor.bin";
  checkpoint::save(good, agent);
  EXPECT_NO_THROW(checkpoint::load_actor(good, 64));
  EXPECT_THROW(checkpoint::load_actor(good, 32), CheckpointMismatch);
  EXPECT_THROW(checkpoint::load_actor(dir + "/missing.bin"), CheckpointMismatch);
}

TEST(Imagination, FollowsModelMeanAndFlagsSynthetic) {
  std::mt19937_64 rng(6);
  const EnvConfig env;
  const Normalizer norm = Normalizer::make(env.box, env.limits);
  const auto w = oracle::random_window(rng, 5);
  FittingBuffer buf(5);
  for (auto& s : w) buf.push(s);
  const LocalModel model = local_model(buf, KlmfConfig{}, norm, ActionVec::Zero());
  auto policy = [](const StateVec&) { return ActionVec::Zero(); };

  const StateVec s0 = StateVec::Zero();
  const auto out = imagination_rollouts(model, policy, s0, 4, 3, 0.0, env, norm, rng);
  ASSERT_FALSE(out.empty());
  EXPECT_LE(out.size(), 12u);
  std::size_t i = 0;
  for (int c = 0; c < 3; ++c) {
    StateVec s = s0;
    for (int t = 0; t < 4; ++t, ++i) {
      ASSERT_LT(i, out.size());
      const Experience& e = out[i];
      EXPECT_TRUE(e.synthetic);
      EXPECT_EQ(e.s, s);
      EXPECT_LT((e.a - norm.normalize_action(norm.denormalize_action(ActionVec::Zero())))
                    .cwiseAbs()
                    .maxCoeff(),
                1e-15);
      EXPECT_LT((e.s_next - model.mean(e.s, e.a)).cwiseAbs().maxCoeff(), 1e-15);
      if (e.terminal) {
        ++i;
        break;
      }
      s = e.s_next;
    }
  }
  EXPECT_EQ(i, out.size());
  EXPECT_TRUE(imagination_rollouts(model, policy, s0, 0, 3, 0.0, env, norm, rng).empty());
}

TEST(Mlp, ZeroUpstreamGivesZeroGradients) {
  std::mt19937_64 rng(9);
  Mlp net({4, 8, 8, 2}, OutputActivation::kTanh);
  net.init(rng, 0.5);
  Mlp::Cache c;
  net.forward(Matrix::Random(4, 3), &c);
  const auto g = net.backward(c, Matrix::Zero(2, 3));
  for (const auto& l : g.layers) {
    EXPECT_TRUE(l.W.isZero(0.0));
    EXPECT_TRUE(l.b.isZero(0.0));
  }
  EXPECT_TRUE(g.input.isZero(0.0));
}

TEST(Adam, ZeroGradientLeavesParameters) {
  std::mt19937_64 rng(10);
  Mlp net({3, 4, 1}, OutputActivation::kLinear);
  net.init(rng, 0.5);
  const Mlp before = net;
  Adam opt(net, {1e-3});
  std::vector<Layer> zero;
  for (const auto& l : net.layers())
    zero.push_back({Matrix::Zero(l.W.rows(), l.W.cols()), Vector::Zero(l.b.size())});
  for (int i = 0; i < 100; ++i) opt.step(net, zero);
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    EXPECT_EQ(net.layers()[l].W, before.layers()[l].W);
    EXPECT_EQ(net.layers()[l].b, before.layers()[l].b);
  }
}

TEST(SoftUpdate, GeometricConvergence) {
  std::mt19937_64 rng(11);
  Mlp online({3, 4, 2}, OutputActivation::kLinear), target = online;
  online.init(rng);
  target.init(rng);
  const Matrix gap0 = target.layers()[0].W - online.layers()[0].W;
  const double tau = 0.1;
  for (int n = 1; n <= 50; ++n) {
    soft_update(target, online, tau);
    const Matrix gap = target.layers()[0].W - online.layers()[0].W;
    EXPECT_LT((gap - std::pow(1.0 - tau, n) * gap0).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Ddpg, SingleTransitionTdErrorVanishes) {
  std::mt19937_64 rng(12);
  DdpgAgent agent(DdpgConfig{}, rng);
  Experience e;
  e.s = StateVec::Constant(0.2);
  e.a = ActionVec::Constant(-0.3);
  e.r = 1.0;
  e.terminal = true;
  double last = 0.0;
  for (int i = 0; i < 500; ++i) last = agent.update_batch({&e}).critic;
  EXPECT_LT(last, 1e-3);
}
