#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "fieldnode/autodiff.hpp"

namespace fieldnode::optim {

using ad::Matrix;
using ad::Parameter;

enum class Kind { adam, sgd };

inline Kind parse_kind(const std::string& s) {
  if (s == "adam") return Kind::adam;
  if (s == "sgd") return Kind::sgd;
  throw ConfigError("unknown optimizer: " + s);
}

struct OptimizerConfig {
  Kind kind = Kind::adam;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 100.0;  // <= 0 disables clipping
};

template <class T>
double global_grad_norm(const std::vector<Parameter<T>*>& params) {
  double sq = 0;
  for (const auto* p : params)
    if (p->grad.size() != 0) sq += static_cast<double>(p->grad.squaredNorm());
  return std::sqrt(sq);
}

// Adaptive-moment descent with global-norm clipping; Kind::sgd performs the
// literal update p <- p - lr * grad (clipping still applies when enabled).
template <class T>
class Optimizer {
 public:
  Optimizer(std::vector<Parameter<T>*> params, OptimizerConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
      m_.emplace(p, Matrix<T>::Zero(p->value.rows(), p->value.cols()));
      v_.emplace(p, Matrix<T>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  // Returns the pre-clip gradient norm.
  double step() {
    const double norm = global_grad_norm(params_);
    if (cfg_.lr == 0) return norm;  // frozen: parameters and moments stay bit-identical
    const double clip = (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
    ++t_;
    const T lr = static_cast<T>(cfg_.lr);
    if (cfg_.kind == Kind::sgd) {
      for (auto* p : params_)
        if (p->grad.size() != 0) p->value -= lr * static_cast<T>(clip) * p->grad;
      return norm;
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T step_size = static_cast<T>(cfg_.lr / bc1);
    const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
    const T eps = static_cast<T>(cfg_.eps);
    for (auto* p : params_) {
      if (p->grad.size() == 0) continue;
      Matrix<T> g = p->grad * static_cast<T>(clip);
      auto& m = m_.at(p);
      auto& v = v_.at(p);
      m = b1 * m + (T(1) - b1) * g;
      v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
      p->value.array() -= step_size * m.array() / ((v.array().sqrt() * inv_sqrt_bc2) + eps);
    }
    return norm;
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  void set_lr(double lr) { cfg_.lr = lr; }
  [[nodiscard]] const OptimizerConfig& config() const { return cfg_; }
  [[nodiscard]] const std::vector<Parameter<T>*>& params() const { return params_; }
  [[nodiscard]] long steps() const { return t_; }

 private:
  std::vector<Parameter<T>*> params_;
  OptimizerConfig cfg_;
  std::unordered_map<const Parameter<T>*, Matrix<T>> m_, v_;
  long t_ = 0;
};

}  // namespace fieldnode::optim
