#pragma once

// Fully connected network with ReLU hidden layers, trained by Adam.
// Batches are column-major: one sample per column.

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "pegrl/types.hpp"

namespace pegrl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class OutputActivation { kLinear = 0, kTanh = 1 };

struct Layer {
  Matrix W;  // out x in
  Vector b;
};

class Mlp {
 public:
  struct Cache {
    std::vector<Matrix> inputs;  // input of each layer
    std::vector<Matrix> pre;     // pre-activation of each layer
    Matrix output;
  };

  Mlp() = default;
  Mlp(const std::vector<int>& sizes, OutputActivation out) : out_(out) {
    if (sizes.size() < 2) throw ShapeMismatch("mlp needs at least an input and an output size");
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
      layers_.push_back({Matrix::Zero(sizes[i + 1], sizes[i]), Vector::Zero(sizes[i + 1])});
    }
  }

  // Hidden layers uniform in +-1/sqrt(fan_in); the last layer uniform in
  // +-final_scale.
  void init(std::mt19937_64& rng, double final_scale = 3e-3) {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const bool last = l + 1 == layers_.size();
      const double bound =
          last ? final_scale : 1.0 / std::sqrt(static_cast<double>(layers_[l].W.cols()));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (Eigen::Index i = 0; i < layers_[l].W.size(); ++i) layers_[l].W.data()[i] = u(rng);
      for (Eigen::Index i = 0; i < layers_[l].b.size(); ++i) layers_[l].b[i] = u(rng);
    }
  }

  Matrix forward(const Matrix& x, Cache* cache = nullptr) const {
    if (x.rows() != input_size()) throw ShapeMismatch("mlp input size mismatch");
    if (cache) {
      cache->inputs.clear();
      cache->pre.clear();
    }
    Matrix h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Matrix z = layers_[l].W * h;
      z.colwise() += layers_[l].b;
      if (cache) {
        cache->inputs.push_back(h);
        cache->pre.push_back(z);
      }
      const bool last = l + 1 == layers_.size();
      if (!last) {
        h = z.cwiseMax(0.0);
      } else if (out_ == OutputActivation::kTanh) {
        h = z.array().tanh().matrix();
      } else {
        h = std::move(z);
      }
    }
    if (cache) cache->output = h;
    return h;
  }

  Vector forward_one(const Vector& x) const { return forward(Matrix(x)).col(0); }

  struct Gradients {
    std::vector<Layer> layers;
    Matrix input;
  };

  // Reverse-mode gradients of sum(upstream .* output) with respect to every
  // parameter and the input. `pre_upstream`, if given, is an extra gradient
  // on the last layer's pre-activation.
  Gradients backward(const Cache& cache, const Matrix& upstream,
                     const Matrix* pre_upstream = nullptr) const {
    Gradients g;
    g.layers.resize(layers_.size());
    Matrix delta = upstream;
    if (out_ == OutputActivation::kTanh) {
      delta = delta.cwiseProduct((1.0 - cache.output.array().square()).matrix());
    }
    if (pre_upstream) delta += *pre_upstream;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      g.layers[l].W = delta * cache.inputs[l].transpose();
      g.layers[l].b = delta.rowwise().sum();
      Matrix back = layers_[l].W.transpose() * delta;
      if (l > 0) {
        back = back.cwiseProduct((cache.pre[l - 1].array() > 0.0).cast<double>().matrix());
      }
      delta = std::move(back);
    }
    g.input = std::move(delta);
    return g;
  }

  int input_size() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().W.cols()); }
  int output_size() const { return layers_.empty() ? 0 : static_cast<int>(layers_.back().W.rows()); }
  OutputActivation output_activation() const { return out_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  bool same_shape(const Mlp& o) const {
    if (layers_.size() != o.layers_.size() || out_ != o.out_) return false;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (layers_[l].W.rows() != o.layers_[l].W.rows() ||
          layers_[l].W.cols() != o.layers_[l].W.cols())
        return false;
    }
    return true;
  }

 private:
  std::vector<Layer> layers_;
  OutputActivation out_ = OutputActivation::kLinear;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam over a network's parameters.
class Adam {
 public:
  Adam() = default;
  Adam(const Mlp& net, AdamConfig cfg) : cfg_(cfg) {
    for (const auto& l : net.layers()) {
      m_.push_back({Matrix::Zero(l.W.rows(), l.W.cols()), Vector::Zero(l.b.size())});
      v_.push_back({Matrix::Zero(l.W.rows(), l.W.cols()), Vector::Zero(l.b.size())});
    }
  }

  void step(Mlp& net, const std::vector<Layer>& grads) {
    if (grads.size() != m_.size()) throw ShapeMismatch("adam gradient shape mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * grad;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * grad.cwiseAbs2();
      param.array() -=
          cfg_.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.epsilon);
    };
    for (std::size_t l = 0; l < grads.size(); ++l) {
      update(net.layers()[l].W, grads[l].W, m_[l].W, v_[l].W);
      update(net.layers()[l].b, grads[l].b, m_[l].b, v_[l].b);
    }
  }

  long steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<Layer> m_, v_;
  long t_ = 0;
};

// target <- tau * online + (1 - tau) * target, elementwise.
inline void soft_update(Mlp& target, const Mlp& online, double tau) {
  if (!target.same_shape(online)) throw ShapeMismatch("soft_update shape mismatch");
  for (std::size_t l = 0; l < online.layers().size(); ++l) {
    auto& t = target.layers()[l];
    const auto& o = online.layers()[l];
    if (tau == 1.0) {
      t = o;
      continue;
    }
    t.W = tau * o.W + (1.0 - tau) * t.W;
    t.b = tau * o.b + (1.0 - tau) * t.b;
  }
}

}  // namespace pegrl
