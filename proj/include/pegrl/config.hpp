#pragma once

// Run configuration and its JSON document form.
//
// Every section is optional in the file; missing keys keep their defaults and
// unknown keys are rejected. Lengths are in meters, angles in radians unless
// the key says otherwise.

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pegrl/ddpg.hpp"
#include "pegrl/mpc.hpp"

namespace pegrl {

enum class Strategy { kMge, kImr, kPlain };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kMge:
      return "mge";
    case Strategy::kImr:
      return "imr";
    case Strategy::kPlain:
      return "plain";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "mge") return Strategy::kMge;
  if (s == "imr") return Strategy::kImr;
  if (s == "plain") return Strategy::kPlain;
  throw ConfigError("unknown strategy '" + s + "' (expected mge, imr or plain)");
}

// Policy used by dataset collection.
enum class DatasetPolicy { kMge, kRandom };

struct TrainingConfig {
  int episodes = 100;      // M
  int mpc_episodes = 20;   // I
  double noise_fraction = 0.1;
  int imr_rollout_length = 5;
  int imr_rollouts_per_step = 1;
  DatasetPolicy dataset_policy = DatasetPolicy::kRandom;

  void validate() const {
    if (episodes < 0) throw ConfigError("training: episodes must be >= 0");
    if (mpc_episodes < 0) throw ConfigError("training: mpc_episodes must be >= 0");
    if (!(noise_fraction >= 0.0)) throw ConfigError("training: noise_fraction must be >= 0");
    if (imr_rollout_length < 0 || imr_rollouts_per_step < 0)
      throw ConfigError("training: imagination rollout sizes must be >= 0");
  }
};

struct RunConfig {
  static constexpr int kSchemaVersion = 1;

  EnvConfig env;
  Vec3 e_scale{2.0e-3, 2.0e-3, deg2rad(4.0)};
  double df_factor = 0.5;
  KlmfConfig klmf;
  DdpgConfig ddpg;
  MpcPolicy mpc;
  TrainingConfig training;
  Strategy strategy = Strategy::kMge;
  std::vector<std::uint64_t> seeds{1};
  std::string output_dir = "out";

  Normalizer normalizer() const { return Normalizer::make(env.box, env.limits, e_scale, df_factor); }

  void validate() const {
    env.validate();
    klmf.validate();
    ddpg.validate();
    mpc.validate();
    training.validate();
    if (!((e_scale.array() > 0.0).all() && df_factor > 0.0))
      throw ConfigError("normalizer scales must be > 0");
    if (std::abs(klmf.prior.hole_depth - env.geom.hole_depth) > 1e-12)
      throw ConfigError("klmf.prior.hole_depth must equal geometry.hole_depth");
  }
};

namespace json_detail {

using nlohmann::json;

inline json vec3(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

inline Vec3 as_vec3(const json& j, const char* key) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(std::string(key) + ": expected 3 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

// Reads the keys of one section into their targets and rejects anything else.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(name_ + ": expected an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(name_ + ": unknown key '" + k + "'");
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      if constexpr (std::is_same_v<T, Vec3>) {
        out = as_vec3(j_.at(key), key);
      } else {
        out = j_.at(key).get<T>();
      }
    } catch (const json::exception& e) {
      throw ConfigError(name_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace json_detail

inline nlohmann::json to_json(const RunConfig& c) {
  using json_detail::vec3;
  nlohmann::json j;
  j["schema_version"] = RunConfig::kSchemaVersion;
  const auto& g = c.env.geom;
  j["geometry"] = {{"hole_width", g.hole_width},       {"peg_width", g.peg_width},
                   {"hole_depth", g.hole_depth},       {"fillet_radius", g.fillet_radius},
                   {"peg_length", g.peg_length}};
  const auto& ct = c.env.contact;
  j["contact"] = {{"k_env", ct.k_env},           {"mu", ct.mu},
                  {"solver_tol", ct.solver_tol}, {"max_iters", ct.max_iters},
                  {"slip_reg", ct.slip_reg},     {"corner_blend", ct.corner_blend}};
  j["force_limits"] = vec3(c.env.limits.vec());
  j["action_limits"] = {{"dxd_max", vec3(c.env.box.dxd_max)}, {"k_max", vec3(c.env.box.k_max)}};
  const auto& w = c.env.weights;
  j["reward"] = {{"w_dis", w.w_dis},
                 {"w_f", w.w_f},
                 {"w_stf", w.w_stf},
                 {"success_bonus", w.success_bonus},
                 {"overload_bonus", w.overload_bonus}};
  j["episode"] = {{"horizon", c.env.horizon},
                  {"init_depth", c.env.init_depth},
                  {"init_angle_range_deg", c.env.init_angle_range_deg},
                  {"success_xi", c.env.success_xi},
                  {"resume_from_recovered", c.env.resume_from_recovered},
                  {"pose_noise_std", vec3(c.env.pose_noise_std)},
                  {"min_stiffness_fraction", c.env.min_stiffness_fraction}};
  j["normalizer"] = {{"e_scale", vec3(c.e_scale)}, {"df_factor", c.df_factor}};
  j["klmf"] = {{"eta", vec3(c.klmf.prior.eta)},
               {"hole_depth", c.klmf.prior.hole_depth},
               {"ridge", c.klmf.ridge},
               {"jitter", c.klmf.jitter},
               {"window", c.klmf.window},
               {"noise", to_string(c.klmf.noise)},
               {"diagonal", c.klmf.diagonal}};
  const auto& d = c.ddpg;
  j["ddpg"] = {{"hidden", d.hidden},
               {"actor_lr", d.actor_lr},
               {"critic_lr", d.critic_lr},
               {"gamma", d.gamma},
               {"tau", d.tau},
               {"batch_size", d.batch_size},
               {"buffer_capacity", d.buffer_capacity},
               {"updates_per_step", d.updates_per_step},
               {"final_layer_init", d.final_layer_init},
               {"preactivation_penalty", d.preactivation_penalty}};
  const auto& m = c.mpc;
  j["mpc"] = {{"max_iters", m.max_iters},
              {"tolerance", m.tolerance},
              {"hessian_floor", m.hessian_floor},
              {"fd_step", m.fd_step},
              {"noise_fraction", m.noise_fraction}};
  const auto& t = c.training;
  j["training"] = {{"episodes", t.episodes},
                   {"mpc_episodes", t.mpc_episodes},
                   {"noise_fraction", t.noise_fraction},
                   {"imr_rollout_length", t.imr_rollout_length},
                   {"imr_rollouts_per_step", t.imr_rollouts_per_step},
                   {"dataset_policy", t.dataset_policy == DatasetPolicy::kMge ? "mge" : "random"},
                   {"strategy", to_string(c.strategy)},
                   {"seeds", c.seeds}};
  j["output_dir"] = c.output_dir;
  return j;
}

inline RunConfig from_json(const nlohmann::json& j) {
  using json_detail::Section;
  RunConfig c;
  {
    Section root(j, "config");
    int version = RunConfig::kSchemaVersion;
    root.get("schema_version", version);
    if (version != RunConfig::kSchemaVersion)
      throw ConfigError("unsupported schema_version " + std::to_string(version));
    if (const auto* s = root.child("geometry")) {
      Section sec(*s, "geometry");
      auto& g = c.env.geom;
      sec.get("hole_width", g.hole_width);
      sec.get("peg_width", g.peg_width);
      sec.get("hole_depth", g.hole_depth);
      sec.get("fillet_radius", g.fillet_radius);
      sec.get("peg_length", g.peg_length);
      c.klmf.prior.hole_depth = g.hole_depth;
    }
    if (const auto* s = root.child("contact")) {
      Section sec(*s, "contact");
      auto& ct = c.env.contact;
      sec.get("k_env", ct.k_env);
      sec.get("mu", ct.mu);
      sec.get("solver_tol", ct.solver_tol);
      sec.get("max_iters", ct.max_iters);
      sec.get("slip_reg", ct.slip_reg);
      sec.get("corner_blend", ct.corner_blend);
    }
    if (const auto* s = root.child("force_limits")) {
      const Vec3 v = json_detail::as_vec3(*s, "force_limits");
      c.env.limits = {v[0], v[1], v[2]};
    }
    if (const auto* s = root.child("action_limits")) {
      Section sec(*s, "action_limits");
      sec.get("dxd_max", c.env.box.dxd_max);
      sec.get("k_max", c.env.box.k_max);
    }
    if (const auto* s = root.child("reward")) {
      Section sec(*s, "reward");
      auto& w = c.env.weights;
      sec.get("w_dis", w.w_dis);
      sec.get("w_f", w.w_f);
      sec.get("w_stf", w.w_stf);
      sec.get("success_bonus", w.success_bonus);
      sec.get("overload_bonus", w.overload_bonus);
    }
    if (const auto* s = root.child("episode")) {
      Section sec(*s, "episode");
      sec.get("horizon", c.env.horizon);
      sec.get("init_depth", c.env.init_depth);
      sec.get("init_angle_range_deg", c.env.init_angle_range_deg);
      sec.get("success_xi", c.env.success_xi);
      sec.get("resume_from_recovered", c.env.resume_from_recovered);
      sec.get("pose_noise_std", c.env.pose_noise_std);
      sec.get("min_stiffness_fraction", c.env.min_stiffness_fraction);
    }
    if (const auto* s = root.child("normalizer")) {
      Section sec(*s, "normalizer");
      sec.get("e_scale", c.e_scale);
      sec.get("df_factor", c.df_factor);
    }
    if (const auto* s = root.child("klmf")) {
      Section sec(*s, "klmf");
      sec.get("eta", c.klmf.prior.eta);
      sec.get("hole_depth", c.klmf.prior.hole_depth);
      sec.get("ridge", c.klmf.ridge);
      sec.get("jitter", c.klmf.jitter);
      sec.get("window", c.klmf.window);
      std::string noise = to_string(c.klmf.noise);
      sec.get("noise", noise);
      c.klmf.noise = parse_noise_estimate(noise);
      sec.get("diagonal", c.klmf.diagonal);
    }
    if (const auto* s = root.child("ddpg")) {
      Section sec(*s, "ddpg");
      auto& d = c.ddpg;
      sec.get("hidden", d.hidden);
      sec.get("actor_lr", d.actor_lr);
      sec.get("critic_lr", d.critic_lr);
      sec.get("gamma", d.gamma);
      sec.get("tau", d.tau);
      sec.get("batch_size", d.batch_size);
      sec.get("buffer_capacity", d.buffer_capacity);
      sec.get("updates_per_step", d.updates_per_step);
      sec.get("final_layer_init", d.final_layer_init);
      sec.get("preactivation_penalty", d.preactivation_penalty);
    }
    if (const auto* s = root.child("mpc")) {
      Section sec(*s, "mpc");
      auto& m = c.mpc;
      sec.get("max_iters", m.max_iters);
      sec.get("tolerance", m.tolerance);
      sec.get("hessian_floor", m.hessian_floor);
      sec.get("fd_step", m.fd_step);
      sec.get("noise_fraction", m.noise_fraction);
    }
    if (const auto* s = root.child("training")) {
      Section sec(*s, "training");
      auto& t = c.training;
      sec.get("episodes", t.episodes);
      sec.get("mpc_episodes", t.mpc_episodes);
      sec.get("noise_fraction", t.noise_fraction);
      sec.get("imr_rollout_length", t.imr_rollout_length);
      sec.get("imr_rollouts_per_step", t.imr_rollouts_per_step);
      std::string policy = t.dataset_policy == DatasetPolicy::kMge ? "mge" : "random";
      sec.get("dataset_policy", policy);
      if (policy == "mge") {
        t.dataset_policy = DatasetPolicy::kMge;
      } else if (policy == "random") {
        t.dataset_policy = DatasetPolicy::kRandom;
      } else {
        throw ConfigError("training.dataset_policy must be mge or random");
      }
      std::string strategy = to_string(c.strategy);
      sec.get("strategy", strategy);
      c.strategy = parse_strategy(strategy);
      sec.get("seeds", c.seeds);
    }
    root.get("output_dir", c.output_dir);
  }
  c.validate();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  return from_json(j);
}

inline void save_config(const std::string& path, const RunConfig& c) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write config file: " + path);
  os << to_json(c).dump(2) << '\n';
}

}  // namespace pegrl
