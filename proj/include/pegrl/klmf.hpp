#pragma once

// Kalman-filter-based local model fitting (KLMF).
//
// A windowed linear-Gaussian fit of s' given (s, a) is fused with an
// analytical clamped-spring prior. All fitting and fusion run in normalized
// coordinates; the prior matrices are conjugated by the normalizer.

#include <array>
#include <cmath>
#include <deque>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "pegrl/mdp.hpp"

namespace pegrl {

inline constexpr int kInputDim = kStateDim + kActionDim;

using StateMat = Eigen::Matrix<double, kStateDim, kStateDim>;
using ControlMat = Eigen::Matrix<double, kStateDim, kActionDim>;
using InputVec = Eigen::Matrix<double, kInputDim, 1>;
using InputMat = Eigen::Matrix<double, kInputDim, kInputDim>;

// (s, a, s') in normalized coordinates.
struct FitSample {
  StateVec s = StateVec::Zero();
  ActionVec a = ActionVec::Zero();
  StateVec s_next = StateVec::Zero();
};

class FittingBuffer {
 public:
  explicit FittingBuffer(std::size_t capacity = 5) : capacity_(capacity) {
    if (capacity_ == 0) throw ConfigError("fitting buffer capacity must be > 0");
  }

  void push(const FitSample& sample) {
    if (samples_.size() == capacity_) samples_.pop_front();
    samples_.push_back(sample);
  }
  void clear() { samples_.clear(); }
  bool full() const { return samples_.size() == capacity_; }
  std::size_t size() const { return samples_.size(); }
  std::size_t capacity() const { return capacity_; }
  const std::deque<FitSample>& samples() const { return samples_; }

 private:
  std::size_t capacity_;
  std::deque<FitSample> samples_;
};

struct PriorParams {
  Vec3 eta{0.99, 0.99, 0.99};
  double hole_depth = 36.0e-3;

  void validate() const {
    if (!((eta.array() >= 0.0).all() && (eta.array() <= 1.0).all()))
      throw ConfigError("clamping probabilities must lie in [0, 1]");
    if (!(hole_depth > 0.0)) throw ConfigError("prior hole depth must be > 0");
  }
};

// Joint Gaussian over y1 = [s; a] and y2 = s' with the ridge-regularized
// conditional s' | (s, a) ~ N(z(s, a), R).
struct LinearGaussianFit {
  InputVec mu1 = InputVec::Zero();
  StateVec mu2 = StateVec::Zero();
  InputMat sigma11 = InputMat::Zero();
  Eigen::Matrix<double, kInputDim, kStateDim> sigma12 = decltype(sigma12)::Zero();
  Eigen::Matrix<double, kStateDim, kInputDim> sigma21 = decltype(sigma21)::Zero();
  StateMat sigma22 = StateMat::Zero();
  double lambda = 0.0;
  // sigma21 (sigma11 + lambda I)^-1
  Eigen::Matrix<double, kStateDim, kInputDim> gain = decltype(gain)::Zero();
  StateMat R = StateMat::Zero();

  StateVec predict(const StateVec& s, const ActionVec& a) const {
    InputVec y;
    y << s, a;
    return mu2 + gain * (y - mu1);
  }
};

inline StateMat symmetrized(const StateMat& m) { return 0.5 * (m + m.transpose()); }

inline LinearGaussianFit fit_linear(std::span<const FitSample> samples, double lambda) {
  if (samples.size() < 2) throw InsufficientData("fit_linear needs at least 2 samples");
  const double n = static_cast<double>(samples.size());
  LinearGaussianFit fit;
  fit.lambda = lambda;
  for (const auto& smp : samples) {
    fit.mu1.head<kStateDim>() += smp.s;
    fit.mu1.tail<kActionDim>() += smp.a;
    fit.mu2 += smp.s_next;
  }
  fit.mu1 /= n;
  fit.mu2 /= n;
  for (const auto& smp : samples) {
    InputVec d1;
    d1 << smp.s, smp.a;
    d1 -= fit.mu1;
    const StateVec d2 = smp.s_next - fit.mu2;
    fit.sigma11 += d1 * d1.transpose();
    fit.sigma12 += d1 * d2.transpose();
    fit.sigma22 += d2 * d2.transpose();
  }
  fit.sigma11 /= n;
  fit.sigma12 /= n;
  fit.sigma22 /= n;
  fit.sigma21 = fit.sigma12.transpose();

  const InputMat reg = fit.sigma11 + lambda * InputMat::Identity();
  const Eigen::LDLT<InputMat> ldlt(reg);
  fit.gain = ldlt.solve(fit.sigma12).transpose();
  fit.R = symmetrized(fit.sigma22 - fit.gain * fit.sigma12);
  return fit;
}

inline LinearGaussianFit fit_linear(const FittingBuffer& buffer, double lambda) {
  const std::vector<FitSample> v(buffer.samples().begin(), buffer.samples().end());
  return fit_linear(std::span<const FitSample>(v), lambda);
}

// s' = F s + B a; built for one stiffness, since Eq. (13)-style force rows
// are bilinear in the deviation and the commanded stiffness.
struct PriorTransition {
  StateMat F = StateMat::Zero();
  ControlMat B = ControlMat::Zero();

  StateVec predict(const StateVec& s, const ActionVec& a) const { return F * s + B * a; }
};

// Clamped-spring prior in physical units. Row blocks follow the state layout
// [e; f; df; dx; xi]:
//   e'  = diag(eta) (e + dxd)
//   f'  = diag(eta o k) (e + dxd)
//   df' = diag(eta o k) (e + dxd) - f
//   dx' = (I - diag(eta)) (e + dxd)
//   xi' = xi - dy' / d
inline PriorTransition prior_matrices_physical(const Stiffness& k, const PriorParams& prior) {
  PriorTransition pt;
  const Mat3 eta = prior.eta.asDiagonal();
  const Mat3 eta_k = prior.eta.cwiseProduct(k.vec()).asDiagonal();
  const Mat3 free = Mat3::Identity() - eta;
  Eigen::Matrix<double, 1, 3> xi_row = -free.row(1) / prior.hole_depth;

  pt.F.block<3, 3>(0, 0) = eta;
  pt.F.block<3, 3>(3, 0) = eta_k;
  pt.F.block<3, 3>(6, 0) = eta_k;
  pt.F.block<3, 3>(6, 3) = -Mat3::Identity();
  pt.F.block<3, 3>(9, 0) = free;
  pt.F.block<1, 3>(12, 0) = xi_row;
  pt.F(12, 12) = 1.0;

  pt.B.block<3, 3>(0, 0) = eta;
  pt.B.block<3, 3>(3, 0) = eta_k;
  pt.B.block<3, 3>(6, 0) = eta_k;
  pt.B.block<3, 3>(9, 0) = free;
  pt.B.block<1, 3>(12, 0) = xi_row;
  return pt;
}

// The physical prior conjugated by the diagonal normalization maps. The
// stiffness columns of B are zero, so the action offset adds no constant.
inline PriorTransition prior_matrices(const Stiffness& k, const PriorParams& prior,
                                      const Normalizer& norm) {
  const PriorTransition phys = prior_matrices_physical(k, prior);
  const StateVec s_scale = norm.state_scale();
  const ActionVec a_scale = norm.action_scale();
  PriorTransition pt;
  pt.F = s_scale.cwiseInverse().asDiagonal() * phys.F * s_scale.asDiagonal();
  pt.B = s_scale.cwiseInverse().asDiagonal() * phys.B * a_scale.asDiagonal();
  return pt;
}

inline Stiffness stiffness_of(const ActionVec& a_normalized, const Normalizer& norm) {
  return Stiffness::from(norm.denormalize_action(a_normalized).tail<3>());
}

struct PriorPrediction {
  StateVec mean = StateVec::Zero();
  StateMat P_pred = StateMat::Zero();
};

// Prediction stage without process noise; matrices at the action's stiffness.
inline PriorPrediction prior_predict(const StateVec& s, const ActionVec& a,
                                     const PriorParams& prior, const Normalizer& norm,
                                     const StateMat& P) {
  const PriorTransition pt = prior_matrices(stiffness_of(a, norm), prior, norm);
  return {pt.predict(s, a), symmetrized(pt.F * P * pt.F.transpose())};
}

// Uncentered mean of outer products of recent prior prediction errors.
inline StateMat estimate_P(std::span<const StateVec> errors) {
  if (errors.empty()) throw InsufficientData("estimate_P needs at least one error sample");
  StateMat P = StateMat::Zero();
  for (const auto& e : errors) P += e * e.transpose();
  return symmetrized(P / static_cast<double>(errors.size()));
}

struct Fusion {
  StateVec mean = StateVec::Zero();
  StateMat P_post = StateMat::Zero();
  StateMat gain = StateMat::Zero();
};

// Kalman gain K = P_pred (P_pred + R + jitter I)^-1 for the fused estimate.
inline StateMat kalman_gain(const StateMat& P_pred, const StateMat& R, double jitter) {
  const StateMat innovation = symmetrized(P_pred + R) + jitter * StateMat::Identity();
  const Eigen::LDLT<StateMat> ldlt(innovation);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || !(ldlt.rcond() > 1e-15))
    throw SingularInnovation("innovation covariance is numerically singular");
  // The innovation is symmetric, so K^T = S^-1 P_pred^T.
  return ldlt.solve(P_pred.transpose()).transpose();
}

inline Fusion fuse(const StateVec& prior_mean, const StateMat& P_pred, const StateVec& z,
                   const StateMat& R, double jitter = 1e-9) {
  Fusion out;
  out.gain = kalman_gain(P_pred, R, jitter);
  out.mean = prior_mean + out.gain * (z - prior_mean);
  out.P_post = symmetrized(P_pred - out.gain * P_pred);
  return out;
}

// Measurement noise of the linear fit: the conditional covariance on its own
// window, or the mean outer product of leave-one-out residuals.
enum class NoiseEstimate { kConditional, kLeaveOneOut };

inline std::string to_string(NoiseEstimate n) {
  return n == NoiseEstimate::kConditional ? "conditional" : "leave_one_out";
}

inline NoiseEstimate parse_noise_estimate(const std::string& s) {
  if (s == "conditional") return NoiseEstimate::kConditional;
  if (s == "leave_one_out") return NoiseEstimate::kLeaveOneOut;
  throw ConfigError("unknown noise estimate '" + s + "'");
}

struct KlmfConfig {
  PriorParams prior;
  double ridge = 1.0;
  double jitter = 1e-9;
  std::size_t window = 5;
  NoiseEstimate noise = NoiseEstimate::kLeaveOneOut;
  // Fuse per state dimension (diagonal P_pred and R).
  bool diagonal = true;

  void validate() const {
    prior.validate();
    if (!(ridge >= 0.0)) throw ConfigError("ridge must be >= 0");
    if (!(jitter > 0.0)) throw ConfigError("jitter must be > 0");
    if (window < 2) throw ConfigError("fitting window must hold at least 2 samples");
    if (noise == NoiseEstimate::kLeaveOneOut && window < 3)
      throw ConfigError("leave-one-out noise needs a window of at least 3 samples");
  }
};

inline StateMat leave_one_out_noise(std::span<const FitSample> samples, double lambda) {
  if (samples.size() < 3) throw InsufficientData("leave-one-out noise needs at least 3 samples");
  StateMat R = StateMat::Zero();
  std::vector<FitSample> rest;
  rest.reserve(samples.size() - 1);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    rest.clear();
    for (std::size_t j = 0; j < samples.size(); ++j)
      if (j != i) rest.push_back(samples[j]);
    const LinearGaussianFit fit = fit_linear(std::span<const FitSample>(rest), lambda);
    const StateVec e = samples[i].s_next - fit.predict(samples[i].s, samples[i].a);
    R += e * e.transpose();
  }
  return symmetrized(R / static_cast<double>(samples.size()));
}

inline StateMat diagonal_part(const StateMat& m) { return m.diagonal().asDiagonal(); }

// Prior prediction errors over the fitting window, each with the prior built
// at that sample's own stiffness.
inline std::vector<StateVec> prior_errors(std::span<const FitSample> samples,
                                          const PriorParams& prior, const Normalizer& norm) {
  std::vector<StateVec> errors;
  errors.reserve(samples.size());
  for (const auto& smp : samples) {
    const PriorTransition pt = prior_matrices(stiffness_of(smp.a, norm), prior, norm);
    errors.push_back(smp.s_next - pt.predict(smp.s, smp.a));
  }
  return errors;
}

// Everything the fusion needs from one fitting window.
struct WindowFit {
  LinearGaussianFit fit;
  StateMat P = StateMat::Zero();
  StateMat R = StateMat::Zero();
};

inline WindowFit fit_window(std::span<const FitSample> samples, const KlmfConfig& cfg,
                            const Normalizer& norm) {
  WindowFit w{fit_linear(samples, cfg.ridge)};
  const auto errors = prior_errors(samples, cfg.prior, norm);
  w.P = estimate_P(std::span<const StateVec>(errors));
  w.R = cfg.noise == NoiseEstimate::kLeaveOneOut ? leave_one_out_noise(samples, cfg.ridge)
                                                 : w.fit.R;
  return w;
}

// Fused affine one-step predictor. The prior matrices, the propagated
// covariance and the gain are frozen at a nominal action's stiffness, which
// makes the mean affine in (s, a).
class LocalModel {
 public:
  LocalModel(WindowFit w, const KlmfConfig& cfg, Normalizer norm, const ActionVec& a_nominal)
      : fit_(std::move(w.fit)),
        P_(w.P),
        R_(cfg.diagonal ? diagonal_part(w.R) : w.R),
        prior_(cfg.prior),
        norm_(std::move(norm)),
        jitter_(cfg.jitter),
        diagonal_(cfg.diagonal) {
    relinearize(a_nominal);
  }

  // Re-evaluates F, B, P_pred and the gain at a new nominal stiffness.
  void relinearize(const ActionVec& a_nominal) {
    a_nominal_ = a_nominal;
    prior_tr_ = prior_matrices(stiffness_of(a_nominal, norm_), prior_, norm_);
    P_pred_ = symmetrized(prior_tr_.F * P_ * prior_tr_.F.transpose());
    if (diagonal_) P_pred_ = diagonal_part(P_pred_);
    gain_ = kalman_gain(P_pred_, R_, jitter_);
    P_post_ = symmetrized(P_pred_ - gain_ * P_pred_);
  }

  StateVec mean(const StateVec& s, const ActionVec& a) const {
    const StateVec prior_mean = prior_tr_.predict(s, a);
    return prior_mean + gain_ * (fit_.predict(s, a) - prior_mean);
  }

  StateMat jacobian_state() const {
    const StateMat I = StateMat::Identity();
    return (I - gain_) * prior_tr_.F + gain_ * fit_.gain.leftCols<kStateDim>();
  }
  ControlMat jacobian_action() const {
    const StateMat I = StateMat::Identity();
    return (I - gain_) * prior_tr_.B + gain_ * fit_.gain.rightCols<kActionDim>();
  }

  const LinearGaussianFit& fit() const { return fit_; }
  const PriorTransition& prior_transition() const { return prior_tr_; }
  const StateMat& P() const { return P_; }
  const StateMat& R() const { return R_; }
  const StateMat& P_pred() const { return P_pred_; }
  const StateMat& P_post() const { return P_post_; }
  const StateMat& gain() const { return gain_; }
  const ActionVec& nominal_action() const { return a_nominal_; }
  const Normalizer& normalizer() const { return norm_; }

 private:
  LinearGaussianFit fit_;
  StateMat P_;
  StateMat R_;
  PriorParams prior_;
  Normalizer norm_;
  double jitter_;
  bool diagonal_;
  ActionVec a_nominal_ = ActionVec::Zero();
  PriorTransition prior_tr_;
  StateMat P_pred_ = StateMat::Zero();
  StateMat P_post_ = StateMat::Zero();
  StateMat gain_ = StateMat::Zero();
};

inline LocalModel local_model(const FittingBuffer& buffer, const KlmfConfig& cfg,
                              const Normalizer& norm, const ActionVec& a_nominal) {
  if (!buffer.full()) throw InsufficientData("local model needs a full fitting buffer");
  const std::vector<FitSample> v(buffer.samples().begin(), buffer.samples().end());
  return LocalModel(fit_window(std::span<const FitSample>(v), cfg, norm), cfg, norm, a_nominal);
}

struct PredictorScore {
  std::string method;
  double winning_rate = 0.0;
  double mean_error = 0.0;
  double error_std = 0.0;
  std::size_t evaluated = 0;
};

// Streams a time-ordered transition log (physical units) and scores the four
// one-step predictors against the realized next state, with the fitting
// window maintained exactly as during training: cleared at episode
// boundaries, LPPR-active transitions never enter it and are not scored. Each
// row is predicted from strictly earlier rows of its episode. Exact ties go to
// the earlier method in the order Prior, Linear, Average, Kalman.
inline std::vector<PredictorScore> benchmark_predictors(std::span<const Transition> rows,
                                                        const KlmfConfig& cfg,
                                                        const Normalizer& norm) {
  cfg.validate();
  if (rows.size() < cfg.window + 1)
    throw MalformedDataset("benchmark needs at least window + 1 transitions");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].episode < rows[i - 1].episode ||
        (rows[i].episode == rows[i - 1].episode && rows[i].t <= rows[i - 1].t))
      throw MalformedDataset("transitions are not time-ordered within episodes");
  }
  for (const auto& row : rows) {
    if (!row.s.allFinite() || !row.a.allFinite() || !row.s_next.allFinite())
      throw MalformedDataset("non-finite transition fields");
  }

  const std::vector<std::string> names{"Prior", "Linear", "Average", "Kalman"};
  constexpr std::size_t kMethods = 4;
  std::vector<std::vector<double>> errors(kMethods);
  std::vector<std::size_t> wins(kMethods, 0);

  FittingBuffer buffer(cfg.window);
  int episode = rows.front().episode;
  for (const auto& row : rows) {
    if (row.episode != episode) {
      buffer.clear();
      episode = row.episode;
    }
    if (row.lppr_active) continue;
    const FitSample smp{norm.normalize_state(row.s), norm.normalize_action(row.a),
                        norm.normalize_state(row.s_next)};
    if (buffer.full()) {
      const std::vector<FitSample> v(buffer.samples().begin(), buffer.samples().end());
      // Linearizing at the row's own action puts the prior at its stiffness.
      const LocalModel model(fit_window(std::span<const FitSample>(v), cfg, norm), cfg, norm,
                             smp.a);
      const StateVec prior = model.prior_transition().predict(smp.s, smp.a);
      const StateVec z = model.fit().predict(smp.s, smp.a);
      const StateVec fused = model.mean(smp.s, smp.a);

      const std::array<StateVec, kMethods> preds{prior, z, 0.5 * (prior + z), fused};
      std::size_t best = 0;
      double best_err = std::numeric_limits<double>::infinity();
      for (std::size_t m = 0; m < kMethods; ++m) {
        const double err = (preds[m] - smp.s_next).norm();
        errors[m].push_back(err);
        if (err < best_err) {
          best_err = err;
          best = m;
        }
      }
      ++wins[best];
    }
    buffer.push(smp);
  }

  std::vector<PredictorScore> table;
  const std::size_t evaluated = errors.front().size();
  if (evaluated == 0) throw MalformedDataset("no transition had a full fitting window");
  for (std::size_t m = 0; m < kMethods; ++m) {
    double sum = 0.0;
    for (double e : errors[m]) sum += e;
    const double mean = sum / static_cast<double>(evaluated);
    double var = 0.0;
    for (double e : errors[m]) var += (e - mean) * (e - mean);
    table.push_back({names[m], static_cast<double>(wins[m]) / static_cast<double>(evaluated), mean,
                     std::sqrt(var / static_cast<double>(evaluated)), evaluated});
  }
  return table;
}

}  // namespace pegrl
