#pragma once

// Training loop, evaluation sweeps, dataset collection and aggregation.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pegrl/config.hpp"
#include "pegrl/io.hpp"

namespace pegrl {

struct RunAudit {
  long real_steps = 0;
  long lppr_active_steps = 0;
  long excluded_from_replay = 0;
  long excluded_from_fitting = 0;
  long mpc_actions = 0;
  long random_actions = 0;
  long local_models_built = 0;
  long synthetic_injected = 0;
  long real_injected = 0;
  long fitting_injected = 0;
  long agent_updates = 0;
  long aborted_episodes = 0;
  long fitting_mixed_episodes = 0;  // windows holding samples of two episodes
};

struct RunResult {
  std::vector<csv::EpisodeMetrics> episodes;
  RunAudit audit;
  std::vector<Transition> log;
  double wall_seconds = 0.0;
  std::optional<DdpgAgent> agent;
};

namespace detail {

inline ActionVec random_action(const ActionLimits& box, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const ActionVec lo = box.lower(), hi = box.upper();
  ActionVec a;
  for (int i = 0; i < kActionDim; ++i) a[i] = lo[i] + (hi[i] - lo[i]) * u(rng);
  return a;
}

}  // namespace detail

// Algorithm 1 for one seed. Episodes up to `mpc_episodes` act through
// one-step iLQG on the fused local model (mge and imr); all others act through
// the actor. Exploration noise is added to every action.
inline RunResult train_run(const RunConfig& cfg, std::uint64_t seed, Strategy strategy,
                           bool keep_log = true) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  std::mt19937_64 rng(seed);
  std::mt19937_64 init_rng(seed ^ 0x9e3779b97f4a7c15ULL);

  const Normalizer norm = cfg.normalizer();
  const EnvConfig& ec = cfg.env;
  PegInHoleEnv env(ec);
  RunResult out;
  out.agent.emplace(cfg.ddpg, init_rng);
  DdpgAgent& agent = *out.agent;
  ReplayBuffer replay(cfg.ddpg.buffer_capacity);
  FittingBuffer fitting(cfg.klmf.window);
  std::vector<int> fitting_episodes;
  std::optional<LocalModel> model;
  const StepCost cost{ec.weights, ec.limits, ec.box, norm};
  const bool model_based = strategy != Strategy::kPlain;

  for (int ep = 1; ep <= cfg.training.episodes; ++ep) {
    csv::EpisodeMetrics m;
    m.episode = ep;
    State s = env.reset(rng);
    fitting.clear();
    fitting_episodes.clear();
    ActionVec prev_a_n = norm.normalize_action(ActionVec::Zero());
    const bool mpc_phase = model_based && ep <= cfg.training.mpc_episodes;

    for (int t = 0; t < ec.horizon; ++t) {
      const StateVec s_n = norm.normalize_state(s.vec());
      ActionVec a_star;
      if (mpc_phase) {
        if (model) {
          const MpcResult r = ilqg_one_step(s_n, *model, cost, cfg.mpc, prev_a_n);
          a_star = norm.denormalize_action(r.action);
          ++out.audit.mpc_actions;
          ++m.mpc_steps;
        } else {
          a_star = detail::random_action(ec.box, rng);
          ++out.audit.random_actions;
        }
      } else {
        a_star = norm.denormalize_action(agent.act(s_n));
      }
      const ActionVec a = explore(a_star, ec.box, cfg.training.noise_fraction, rng);

      StepResult res;
      try {
        res = env.step(Action::from(a), &rng);
      } catch (const NonConvergence&) {
        m.aborted = true;
        ++out.audit.aborted_episodes;
        break;
      }
      ++out.audit.real_steps;
      m.total_reward += res.reward;
      ++m.length;

      Transition tr;
      tr.s = s.vec();
      tr.a = a;
      tr.r = res.reward;
      tr.s_next = res.next.vec();
      tr.terminal = res.termination != Termination::kNone;
      tr.lppr_active = res.u.eps.active();
      tr.eps = res.u.eps;
      tr.episode = ep;
      tr.t = t;
      if (keep_log) out.log.push_back(tr);

      const ActionVec a_n = norm.normalize_action(a);
      const StateVec s_next_n = norm.normalize_state(tr.s_next);
      if (tr.lppr_active) {
        ++m.lppr_activations;
        ++out.audit.lppr_active_steps;
      } else {
        replay.push({s_n, a_n, tr.r, s_next_n, tr.terminal, false});
        ++out.audit.real_injected;
        fitting.push({s_n, a_n, s_next_n});
        ++out.audit.fitting_injected;
        fitting_episodes.push_back(ep);
        if (fitting_episodes.size() > fitting.capacity())
          fitting_episodes.erase(fitting_episodes.begin());
      }
      if (res.termination == Termination::kOverload) ++m.overloads;
      if (res.termination == Termination::kSuccess) m.success = true;

      if (replay.size() >= cfg.ddpg.batch_size) {
        for (int u = 0; u < cfg.ddpg.updates_per_step; ++u) {
          agent.update(replay, rng);
          ++out.audit.agent_updates;
        }
      }

      if (fitting.full() &&
          std::any_of(fitting_episodes.begin(), fitting_episodes.end(),
                      [&](int e) { return e != ep; }))
        ++out.audit.fitting_mixed_episodes;
      if (model_based && fitting.full()) {
        try {
          model = local_model(fitting, cfg.klmf, norm, a_n);
          ++out.audit.local_models_built;
        } catch (const SingularInnovation&) {
        }
        if (strategy == Strategy::kImr && model) {
          auto policy = [&](const StateVec& x) { return agent.act(x); };
          for (auto& e : imagination_rollouts(*model, policy, s_next_n,
                                              cfg.training.imr_rollout_length,
                                              cfg.training.imr_rollouts_per_step,
                                              cfg.training.noise_fraction, ec, norm, rng)) {
            replay.push(e);
            ++out.audit.synthetic_injected;
          }
        }
      }

      prev_a_n = a_n;
      s = res.next;
      if (res.done) break;
    }
    out.episodes.push_back(m);
  }
  out.audit.excluded_from_replay = out.audit.real_steps - out.audit.real_injected;
  out.audit.excluded_from_fitting = out.audit.real_steps - out.audit.fitting_injected;
  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return out;
}

inline std::string run_tag(Strategy strategy, std::uint64_t seed) {
  return to_string(strategy) + "_seed" + std::to_string(seed);
}

// Writes metrics, transition log, checkpoint, audit and timing under `dir`.
inline void write_run_artifacts(const RunResult& r, const std::string& dir, const std::string& tag) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);
  csv::write_metrics((base / ("metrics_" + tag + ".csv")).string(), r.episodes);
  csv::write_transitions((base / ("transitions_" + tag + ".csv")).string(), r.log);
  if (r.agent) checkpoint::save((base / ("checkpoint_" + tag + ".bin")).string(), *r.agent);
  {
    auto os = csv::open_out((base / ("audit_" + tag + ".csv")).string());
    const auto& a = r.audit;
    os << "real_steps,lppr_active_steps,excluded_from_replay,excluded_from_fitting,mpc_actions,"
          "random_actions,local_models_built,synthetic_injected,real_injected,agent_updates,"
          "fitting_injected,aborted_episodes,fitting_mixed_episodes\n"
       << a.real_steps << ',' << a.lppr_active_steps << ',' << a.excluded_from_replay << ','
       << a.excluded_from_fitting << ',' << a.mpc_actions << ',' << a.random_actions << ','
       << a.local_models_built << ',' << a.synthetic_injected << ',' << a.real_injected << ','
       << a.agent_updates << ',' << a.fitting_injected << ',' << a.aborted_episodes << ',' << a.fitting_mixed_episodes << '\n';
  }
  {
    auto os = csv::open_out((base / ("timing_" + tag + ".csv")).string());
    os << "wall_seconds\n" << r.wall_seconds << '\n';
  }
}

// Runs one noise-free policy episode from a fixed initial angle.
template <typename Policy>
bool policy_episode(const EnvConfig& ec, const Normalizer& norm, const Policy& policy,
                    double angle_rad) {
  EnvConfig quiet = ec;
  quiet.pose_noise_std = Vec3::Zero();
  PegInHoleEnv env(quiet);
  State s = env.reset_at_angle(angle_rad);
  for (int t = 0; t < quiet.horizon; ++t) {
    const ActionVec a = norm.denormalize_action(policy(norm.normalize_state(s.vec())));
    StepResult res;
    try {
      res = env.step(Action::from(a));
    } catch (const NonConvergence&) {
      return false;
    }
    if (res.termination == Termination::kSuccess) return true;
    if (res.done) return false;
    s = res.next;
  }
  return false;
}

// Success table over initial angles. Trial j uses actor j mod n and the sign
// of the angle alternates every n trials.
inline std::vector<csv::RobustnessRow> evaluate_robustness(const RunConfig& cfg,
                                                           const std::vector<Mlp>& actors,
                                                           const std::vector<double>& angles_deg,
                                                           int trials) {
  if (actors.empty()) throw ConfigError("evaluate_robustness needs at least one policy");
  for (const auto& a : actors) {
    if (a.input_size() != kStateDim || a.output_size() != kActionDim)
      throw CheckpointMismatch("actor shape does not match the state/action dimensions");
  }
  const Normalizer norm = cfg.normalizer();
  std::vector<csv::RobustnessRow> table;
  const std::size_t n = actors.size();
  for (double deg : angles_deg) {
    csv::RobustnessRow row;
    row.angle_deg = deg;
    row.trials = trials;
    for (int j = 0; j < trials; ++j) {
      const Mlp& actor = actors[static_cast<std::size_t>(j) % n];
      const double sign = (static_cast<std::size_t>(j) / n) % 2 == 0 ? 1.0 : -1.0;
      auto policy = [&](const StateVec& s) -> ActionVec { return actor.forward_one(s); };
      if (policy_episode(cfg.env, norm, policy, sign * deg2rad(deg))) ++row.successes;
    }
    table.push_back(row);
  }
  return table;
}

inline std::vector<csv::RobustnessRow> evaluate_robustness(
    const RunConfig& cfg, const std::vector<std::string>& checkpoints,
    const std::vector<double>& angles_deg, int trials) {
  std::vector<Mlp> actors;
  for (const auto& p : checkpoints) actors.push_back(checkpoint::load_actor(p, cfg.ddpg.hidden));
  return evaluate_robustness(cfg, actors, angles_deg, trials);
}

// Uniform in-box actions; aborted episodes end early.
inline std::vector<Transition> random_episodes(const EnvConfig& ec, int episodes,
                                               double noise_fraction, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PegInHoleEnv env(ec);
  std::vector<Transition> log;
  for (int ep = 1; ep <= episodes; ++ep) {
    State s = env.reset(rng);
    for (int t = 0; t < ec.horizon; ++t) {
      const ActionVec a = explore(detail::random_action(ec.box, rng), ec.box, noise_fraction, rng);
      StepResult res;
      try {
        res = env.step(Action::from(a), &rng);
      } catch (const NonConvergence&) {
        break;
      }
      Transition tr;
      tr.s = s.vec();
      tr.a = a;
      tr.r = res.reward;
      tr.s_next = res.next.vec();
      tr.terminal = res.termination != Termination::kNone;
      tr.lppr_active = res.u.eps.active();
      tr.eps = res.u.eps;
      tr.episode = ep;
      tr.t = t;
      log.push_back(tr);
      s = res.next;
      if (res.done) break;
    }
  }
  return log;
}

// Exactly `steps` exploratory transitions. With the mge policy this is the
// model-guided phase of training (random actions until the first window
// fills, then iLQG on the fused model); otherwise uniform random actions.
inline std::vector<Transition> collect_dataset(const RunConfig& cfg, std::size_t steps,
                                               std::uint64_t seed) {
  std::vector<Transition> rows;
  if (steps == 0) return rows;
  RunConfig c = cfg;
  const bool guided = cfg.training.dataset_policy == DatasetPolicy::kMge;
  c.training.mpc_episodes = guided ? std::numeric_limits<int>::max() : 0;
  c.ddpg.updates_per_step = 0;
  const std::size_t per_episode = static_cast<std::size_t>(c.env.horizon);
  std::uint64_t chunk_seed = seed;
  int episode_offset = 0;
  while (rows.size() < steps) {
    const std::size_t remaining = steps - rows.size();
    c.training.episodes = static_cast<int>(remaining / per_episode + 1);
    RunResult r;
    if (guided) {
      r = train_run(c, chunk_seed, Strategy::kMge, true);
    } else {
      r.log = random_episodes(c.env, c.training.episodes, c.training.noise_fraction, chunk_seed);
    }
    for (auto& tr : r.log) {
      if (rows.size() == steps) break;
      tr.episode += episode_offset;
      rows.push_back(tr);
    }
    episode_offset = rows.empty() ? 0 : rows.back().episode;
    ++chunk_seed;
  }
  return rows;
}

struct LearningCurve {
  std::vector<double> mean;
  std::vector<double> std;
  std::size_t runs = 0;
};

// Per-episode mean and population standard deviation of total reward.
inline LearningCurve aggregate(const std::vector<std::vector<csv::EpisodeMetrics>>& runs) {
  if (runs.empty()) throw ShapeMismatch("aggregate needs at least one run");
  const std::size_t n = runs.front().size();
  for (const auto& r : runs)
    if (r.size() != n) throw ShapeMismatch("runs have different episode counts");
  LearningCurve c;
  c.runs = runs.size();
  c.mean.assign(n, 0.0);
  c.std.assign(n, 0.0);
  const double k = static_cast<double>(runs.size());
  for (std::size_t e = 0; e < n; ++e) {
    double sum = 0.0;
    for (const auto& r : runs) sum += r[e].total_reward;
    const double mean = sum / k;
    double var = 0.0;
    for (const auto& r : runs) var += (r[e].total_reward - mean) * (r[e].total_reward - mean);
    c.mean[e] = mean;
    c.std[e] = std::sqrt(var / k);
  }
  return c;
}

inline void write_curves_csv(const std::string& path, const std::vector<std::string>& labels,
                             const std::vector<LearningCurve>& curves) {
  auto os = csv::open_out(path);
  os << "episode";
  for (const auto& l : labels) os << ',' << l << "_mean," << l << "_std";
  os << '\n';
  std::size_t n = 0;
  for (const auto& c : curves) n = std::max(n, c.mean.size());
  for (std::size_t e = 0; e < n; ++e) {
    os << e + 1;
    for (const auto& c : curves) {
      if (e < c.mean.size()) {
        os << ',' << csv::num(c.mean[e]) << ',' << csv::num(c.std[e]);
      } else {
        os << ",,";
      }
    }
    os << '\n';
  }
}

// Mean line with a +-1 std band per curve.
inline void write_curves_svg(const std::string& path, const std::vector<std::string>& labels,
                             const std::vector<LearningCurve>& curves) {
  constexpr double W = 640, H = 400, L = 60, R = 20, T = 20, B = 50;
  double lo = 0.0, hi = 0.0;
  std::size_t n = 1;
  bool first = true;
  for (const auto& c : curves) {
    n = std::max(n, c.mean.size());
    for (std::size_t e = 0; e < c.mean.size(); ++e) {
      const double a = c.mean[e] - c.std[e], b = c.mean[e] + c.std[e];
      lo = first ? a : std::min(lo, a);
      hi = first ? b : std::max(hi, b);
      first = false;
    }
  }
  if (hi - lo < 1e-12) hi = lo + 1.0;
  auto px = [&](std::size_t e) { return L + (W - L - R) * (n > 1 ? double(e) / double(n - 1) : 0.5); };
  auto py = [&](double v) { return T + (H - T - B) * (hi - v) / (hi - lo); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

  auto os = csv::open_out(path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n"
     << "<text x=\"" << (W / 2) << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">episode</text>\n"
     << "<text x=\"" << L - 5 << "\" y=\"" << T + 10 << "\" text-anchor=\"end\">" << csv::num(hi)
     << "</text>\n"
     << "<text x=\"" << L - 5 << "\" y=\"" << H - B << "\" text-anchor=\"end\">" << csv::num(lo)
     << "</text>\n";
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const auto& c = curves[i];
    const char* color = colors[i % 5];
    if (c.mean.empty()) continue;
    os << "<polygon fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
    for (std::size_t e = 0; e < c.mean.size(); ++e)
      os << px(e) << ',' << py(c.mean[e] + c.std[e]) << ' ';
    for (std::size_t e = c.mean.size(); e-- > 0;)
      os << px(e) << ',' << py(c.mean[e] - c.std[e]) << ' ';
    os << "\"/>\n<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t e = 0; e < c.mean.size(); ++e) os << px(e) << ',' << py(c.mean[e]) << ' ';
    os << "\"/>\n<text x=\"" << W - R - 5 << "\" y=\"" << T + 15 * (i + 1)
       << "\" text-anchor=\"end\" fill=\"" << color << "\">" << labels[i] << "</text>\n";
  }
  os << "</svg>\n";
}

inline void write_benchmark(const std::string& path, const std::vector<PredictorScore>& table) {
  auto os = csv::open_out(path);
  os << "method,winning_rate,mean_error,error_std,evaluated\n";
  for (const auto& s : table) {
    os << s.method << ',' << csv::num(s.winning_rate) << ',' << csv::num(s.mean_error) << ','
       << csv::num(s.error_std) << ',' << s.evaluated << '\n';
  }
}

}  // namespace pegrl
