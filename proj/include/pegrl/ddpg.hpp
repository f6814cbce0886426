#pragma once

// Deep deterministic policy gradient on normalized states and actions.
//
// The actor maps a normalized state to tanh-squashed normalized actions in
// (-1, 1)^6, which the normalizer maps onto the action box. The critic scores
// [s; a] with a linear head.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <deque>
#include <fstream>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "pegrl/mlp.hpp"
#include "pegrl/mpc.hpp"

namespace pegrl {

struct DdpgConfig {
  int hidden = 64;
  double actor_lr = 3e-4;
  double critic_lr = 1e-4;
  double gamma = 0.99;
  double tau = 0.005;
  std::size_t batch_size = 100;
  std::size_t buffer_capacity = 9000;
  int updates_per_step = 1;
  double final_layer_init = 3e-3;
  // Weight of mean squared pre-tanh actor output added to the actor loss.
  double preactivation_penalty = 1e-2;

  void validate() const {
    if (hidden <= 0) throw ConfigError("ddpg: hidden width must be > 0");
    if (!(actor_lr > 0.0 && critic_lr > 0.0)) throw ConfigError("ddpg: learning rates must be > 0");
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("ddpg: require 0 < gamma < 1");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("ddpg: require 0 < tau <= 1");
    if (batch_size == 0 || buffer_capacity < batch_size)
      throw ConfigError("ddpg: require 0 < batch_size <= buffer_capacity");
    if (updates_per_step < 0) throw ConfigError("ddpg: updates_per_step must be >= 0");
    if (!(preactivation_penalty >= 0.0))
      throw ConfigError("ddpg: preactivation_penalty must be >= 0");
  }
};

// Normalized transition as seen by the learner.
struct Experience {
  StateVec s = StateVec::Zero();
  ActionVec a = ActionVec::Zero();
  double r = 0.0;
  StateVec s_next = StateVec::Zero();
  bool terminal = false;
  bool synthetic = false;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 9000) : capacity_(capacity) {
    if (capacity_ == 0) throw ConfigError("replay capacity must be > 0");
  }

  void push(const Experience& e) {
    if (items_.size() == capacity_) {
      if (items_.front().synthetic) --synthetic_;
      items_.pop_front();
    }
    if (e.synthetic) ++synthetic_;
    items_.push_back(e);
  }

  // Uniform minibatch without replacement (Floyd's algorithm).
  std::vector<std::size_t> sample_indices(std::size_t count, std::mt19937_64& rng) const {
    if (count > items_.size()) throw InsufficientBuffer("replay buffer smaller than minibatch");
    std::vector<std::size_t> picked;
    picked.reserve(count);
    std::unordered_set<std::size_t> seen;
    const std::size_t n = items_.size();
    for (std::size_t j = n - count; j < n; ++j) {
      const std::size_t t = std::uniform_int_distribution<std::size_t>(0, j)(rng);
      if (seen.insert(t).second) {
        picked.push_back(t);
      } else {
        seen.insert(j);
        picked.push_back(j);
      }
    }
    return picked;
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t synthetic_count() const { return synthetic_; }
  const Experience& operator[](std::size_t i) const { return items_[i]; }
  const std::deque<Experience>& items() const { return items_; }

 private:
  std::size_t capacity_;
  std::deque<Experience> items_;
  std::size_t synthetic_ = 0;
};

struct UpdateLosses {
  double critic = 0.0;
  double actor = 0.0;  // -mean Q(s, pi(s)) + penalty
};

class DdpgAgent {
 public:
  DdpgAgent(const DdpgConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    cfg_.validate();
    actor_ = Mlp({kStateDim, cfg.hidden, cfg.hidden, kActionDim}, OutputActivation::kTanh);
    critic_ = Mlp({kInputDim, cfg.hidden, cfg.hidden, 1}, OutputActivation::kLinear);
    actor_.init(rng, cfg.final_layer_init);
    critic_.init(rng, cfg.final_layer_init);
    actor_target_ = actor_;
    critic_target_ = critic_;
    actor_opt_ = Adam(actor_, {cfg.actor_lr});
    critic_opt_ = Adam(critic_, {cfg.critic_lr});
  }

  // Deterministic normalized action.
  ActionVec act(const StateVec& s) const { return actor_.forward(Matrix(s)).col(0); }

  double q_value(const StateVec& s, const ActionVec& a) const {
    InputVec x;
    x << s, a;
    return critic_.forward(Matrix(x))(0, 0);
  }

  // Critic regression target r + gamma (1 - terminal) Q'(s', pi'(s')).
  Vector td_targets(const std::vector<const Experience*>& batch) const {
    const auto n = static_cast<Eigen::Index>(batch.size());
    Matrix s_next(kStateDim, n);
    for (Eigen::Index i = 0; i < n; ++i) s_next.col(i) = batch[i]->s_next;
    const Matrix a_next = actor_target_.forward(s_next);
    Matrix x(kInputDim, n);
    x.topRows(kStateDim) = s_next;
    x.bottomRows(kActionDim) = a_next;
    const Matrix q_next = critic_target_.forward(x);
    Vector y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      y[i] = batch[i]->r + (batch[i]->terminal ? 0.0 : cfg_.gamma * q_next(0, i));
    }
    return y;
  }

  UpdateLosses update_batch(const std::vector<const Experience*>& batch) {
    const auto n = static_cast<Eigen::Index>(batch.size());
    if (n == 0) throw InsufficientBuffer("empty minibatch");
    const Vector y = td_targets(batch);

    Matrix x(kInputDim, n), s(kStateDim, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      x.col(i).head<kStateDim>() = batch[i]->s;
      x.col(i).tail<kActionDim>() = batch[i]->a;
      s.col(i) = batch[i]->s;
    }

    UpdateLosses losses;
    Mlp::Cache cc;
    const Matrix q = critic_.forward(x, &cc);
    const Vector td = q.row(0).transpose() - y;
    losses.critic = td.squaredNorm() / static_cast<double>(n);
    const Matrix dq = (2.0 / static_cast<double>(n)) * td.transpose();
    critic_opt_.step(critic_, critic_.backward(cc, dq).layers);

    Mlp::Cache ac;
    const Matrix a_pi = actor_.forward(s, &ac);
    Matrix xa(kInputDim, n);
    xa.topRows(kStateDim) = s;
    xa.bottomRows(kActionDim) = a_pi;
    Mlp::Cache qc;
    const Matrix q_pi = critic_.forward(xa, &qc);
    const Matrix& z = ac.pre.back();
    const double inv_n = 1.0 / static_cast<double>(n);
    losses.actor = -q_pi.mean() + cfg_.preactivation_penalty * z.squaredNorm() * inv_n;
    const Matrix up = Matrix::Constant(1, n, -inv_n);
    const Matrix dqa = critic_.backward(qc, up).input.bottomRows(kActionDim);
    const Matrix dz = (2.0 * cfg_.preactivation_penalty * inv_n) * z;
    actor_opt_.step(actor_, actor_.backward(ac, dqa, &dz).layers);

    soft_update(actor_target_, actor_, cfg_.tau);
    soft_update(critic_target_, critic_, cfg_.tau);
    return losses;
  }

  UpdateLosses update(const ReplayBuffer& buffer, std::mt19937_64& rng) {
    if (buffer.size() < cfg_.batch_size)
      throw InsufficientBuffer("replay buffer smaller than minibatch");
    const auto idx = buffer.sample_indices(cfg_.batch_size, rng);
    std::vector<const Experience*> batch;
    batch.reserve(idx.size());
    for (auto i : idx) batch.push_back(&buffer[i]);
    return update_batch(batch);
  }

  const DdpgConfig& config() const { return cfg_; }
  Mlp& actor() { return actor_; }
  Mlp& critic() { return critic_; }
  const Mlp& actor() const { return actor_; }
  const Mlp& critic() const { return critic_; }
  Mlp& actor_target() { return actor_target_; }
  Mlp& critic_target() { return critic_target_; }

 private:
  DdpgConfig cfg_;
  Mlp actor_, critic_, actor_target_, critic_target_;
  Adam actor_opt_, critic_opt_;
};

// Rolls the fused model mean forward under a policy, with optional noise,
// scoring predicted states with the task reward. Stops after a predicted
// success or overload.
template <typename Policy>
std::vector<Experience> imagination_rollouts(const LocalModel& model, const Policy& policy,
                                             const StateVec& s0, int length, int count,
                                             double noise_fraction, const EnvConfig& env,
                                             const Normalizer& norm, std::mt19937_64& rng) {
  std::vector<Experience> out;
  if (length <= 0 || count <= 0) return out;
  for (int c = 0; c < count; ++c) {
    StateVec s = s0;
    for (int t = 0; t < length; ++t) {
      ActionVec a_phys = norm.denormalize_action(policy(s));
      a_phys = explore(a_phys, env.box, noise_fraction, rng);
      const ActionVec a = norm.normalize_action(a_phys);
      const StateVec s_next = model.mean(s, a);
      const State next_phys = State::from(norm.denormalize_state(s_next));
      Termination term = Termination::kNone;
      if ((next_phys.f.cwiseAbs().array() > env.limits.vec().array()).any()) {
        term = Termination::kOverload;
      } else if (next_phys.xi > env.success_xi) {
        term = Termination::kSuccess;
      }
      const double r = reward(Action::from(a_phys), next_phys, env.weights, env.limits, env.box, term);
      out.push_back({s, a, r, s_next, term != Termination::kNone, true});
      if (term != Termination::kNone) break;
      s = s_next;
    }
  }
  return out;
}

// Checkpoint layout, little-endian:
//   "PEGRLNET" | u32 version | u32 net count
//   per net: u32 name length | name | u32 output activation | u32 layer count
//            per layer: u32 rows | u32 cols | rows*cols f64 (row-major W) | rows f64 (b)
namespace checkpoint {

inline constexpr std::array<char, 8> kMagic{'P', 'E', 'G', 'R', 'L', 'N', 'E', 'T'};
inline constexpr std::uint32_t kVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFFu));
}
inline void put_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof bits);
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}
inline std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    const int c = is.get();
    if (c == EOF) throw CheckpointMismatch("truncated checkpoint");
    v |= static_cast<std::uint32_t>(c & 0xFF) << (8 * i);
  }
  return v;
}
inline double get_f64(std::istream& is) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) {
    const int c = is.get();
    if (c == EOF) throw CheckpointMismatch("truncated checkpoint");
    bits |= static_cast<std::uint64_t>(c & 0xFF) << (8 * i);
  }
  double d;
  std::memcpy(&d, &bits, sizeof d);
  return d;
}

}  // namespace detail

struct NamedNet {
  std::string name;
  Mlp net;
};

inline void write(std::ostream& os, const std::vector<NamedNet>& nets) {
  os.write(kMagic.data(), kMagic.size());
  detail::put_u32(os, kVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(nets.size()));
  for (const auto& [name, net] : nets) {
    detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(net.output_activation()));
    detail::put_u32(os, static_cast<std::uint32_t>(net.layers().size()));
    for (const auto& l : net.layers()) {
      detail::put_u32(os, static_cast<std::uint32_t>(l.W.rows()));
      detail::put_u32(os, static_cast<std::uint32_t>(l.W.cols()));
      for (Eigen::Index r = 0; r < l.W.rows(); ++r)
        for (Eigen::Index c = 0; c < l.W.cols(); ++c) detail::put_f64(os, l.W(r, c));
      for (Eigen::Index r = 0; r < l.b.size(); ++r) detail::put_f64(os, l.b[r]);
    }
  }
}

inline std::vector<NamedNet> read(std::istream& is) {
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw CheckpointMismatch("not a network checkpoint");
  if (detail::get_u32(is) != kVersion) throw CheckpointMismatch("unsupported checkpoint version");
  const std::uint32_t count = detail::get_u32(is);
  std::vector<NamedNet> nets;
  for (std::uint32_t n = 0; n < count; ++n) {
    NamedNet nn;
    const std::uint32_t len = detail::get_u32(is);
    if (len > 4096) throw CheckpointMismatch("corrupt checkpoint name");
    nn.name.resize(len);
    is.read(nn.name.data(), len);
    const auto act = static_cast<OutputActivation>(detail::get_u32(is));
    const std::uint32_t layers = detail::get_u32(is);
    if (layers == 0 || layers > 64) throw CheckpointMismatch("corrupt layer count");
    std::vector<int> sizes;
    std::vector<Layer> params;
    for (std::uint32_t l = 0; l < layers; ++l) {
      const std::uint32_t rows = detail::get_u32(is), cols = detail::get_u32(is);
      if (rows == 0 || cols == 0 || rows > (1u << 16) || cols > (1u << 16))
        throw CheckpointMismatch("corrupt layer shape");
      if (l == 0) sizes.push_back(static_cast<int>(cols));
      if (sizes.back() != static_cast<int>(cols)) throw CheckpointMismatch("inconsistent layers");
      sizes.push_back(static_cast<int>(rows));
      Layer layer{Matrix(rows, cols), Vector(rows)};
      for (std::uint32_t r = 0; r < rows; ++r)
        for (std::uint32_t c = 0; c < cols; ++c) layer.W(r, c) = detail::get_f64(is);
      for (std::uint32_t r = 0; r < rows; ++r) layer.b[r] = detail::get_f64(is);
      params.push_back(std::move(layer));
    }
    nn.net = Mlp(sizes, act);
    nn.net.layers() = std::move(params);
    nets.push_back(std::move(nn));
  }
  return nets;
}

inline void save(const std::string& path, const DdpgAgent& agent) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open checkpoint for writing: " + path);
  write(os, {{"actor", agent.actor()}, {"critic", agent.critic()}});
}

inline std::vector<NamedNet> load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointMismatch("cannot open checkpoint: " + path);
  return read(is);
}

// Loads the actor and checks it against the expected state/action shape.
inline Mlp load_actor(const std::string& path, int hidden = -1) {
  for (auto& nn : load(path)) {
    if (nn.name != "actor") continue;
    const Mlp& a = nn.net;
    if (a.input_size() != kStateDim || a.output_size() != kActionDim ||
        a.output_activation() != OutputActivation::kTanh)
      throw CheckpointMismatch("actor shape does not match the task");
    if (hidden > 0) {
      for (std::size_t l = 0; l + 1 < a.layers().size(); ++l)
        if (a.layers()[l].W.rows() != hidden) throw CheckpointMismatch("actor width mismatch");
    }
    return nn.net;
  }
  throw CheckpointMismatch("checkpoint has no actor network");
}

}  // namespace checkpoint

}  // namespace pegrl
