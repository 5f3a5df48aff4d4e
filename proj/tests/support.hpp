#pragma once

// Shared helpers for the test binaries: finite-difference gradient checks,
// tiny model configs and random episode collection.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "fieldnode/delay.hpp"
#include "fieldnode/nn.hpp"
#include "fieldnode/replay.hpp"
#include "fieldnode/trainer.hpp"

namespace fieldnode::testing {

using Params = std::vector<ad::Parameter<double>*>;
using LossFn = std::function<ad::Var<double>(ad::Graph<double>&)>;

// ||g_analytic - g_numeric|| / max(||g_analytic||, ||g_numeric||) over every
// element of `params`, central differences with step h.
inline double gradient_rel_error(const Params& params, const LossFn& loss, double h = 1e-6) {
  for (auto* p : params) p->zero_grad();
  {
    ad::Graph<double> g;
    g.backward(loss(g));
  }
  double diff = 0, na = 0, nn = 0;
  for (auto* p : params) {
    const ad::Matrix<double> analytic =
        p->grad.size() == 0 ? ad::Matrix<double>::Zero(p->value.rows(), p->value.cols()) : p->grad;
    for (ad::Index i = 0; i < p->value.size(); ++i) {
      double& x = p->value.data()[i];
      const double x0 = x;
      x = x0 + h;
      double up;
      {
        ad::Graph<double> g;
        g.set_grad_enabled(false);
        up = loss(g).scalar();
      }
      x = x0 - h;
      double down;
      {
        ad::Graph<double> g;
        g.set_grad_enabled(false);
        down = loss(g).scalar();
      }
      x = x0;
      const double num = (up - down) / (2 * h);
      const double a = analytic.data()[i];
      diff += (a - num) * (a - num);
      na += a * a;
      nn += num * num;
    }
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
  return std::sqrt(diff) / denom;
}

// Sum of x elementwise-weighted by fixed random coefficients, so every
// output element contributes a distinct gradient.
inline ad::Var<double> random_projection(ad::Graph<double>& g, const ad::Var<double>& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 1);
  ad::Matrix<double> w(x.rows(), x.cols());
  for (ad::Index i = 0; i < w.size(); ++i) w.data()[i] = n(rng);
  return ad::sum(ad::mul(x, g.constant(w)));
}

inline ad::Parameter<double>& random_input(nn::ParameterStore<double>& store, const std::string& name, ad::Index rows,
                                           ad::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  auto& p = store.add(name, rows, cols);
  std::normal_distribution<double> n(0, scale);
  for (ad::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = n(rng);
  return p;
}

inline ModelConfig tiny_model_config(int history = 3) {
  ModelConfig mc;
  mc.d_node = 3;
  mc.d_det = 5;
  mc.d_id = 2;
  mc.history = history;
  mc.message_layers = 2;
  mc.encoder_hidden = 6;
  mc.encoder_layers = 1;
  mc.ssm_hidden = 6;
  mc.head_hidden = 6;
  mc.head_layers = 1;
  return mc;
}

// Uniform random actions; Transition.action is the action that produced the step.
inline Episode random_episode(const EnvSpec& spec, int tau_max, std::uint64_t seed) {
  DelayedEnv env(make_env(spec, seed), tau_max, seed + 1000);
  std::mt19937_64 rng(seed + 2000);
  std::uniform_real_distribution<double> u(-1, 1);
  Episode ep;
  auto s = env.reset();
  ep.push_back({s.observation, std::vector<double>(static_cast<std::size_t>(spec.action_dim), 0.0), 0.0, true, s.delta});
  while (true) {
    std::vector<double> a(static_cast<std::size_t>(spec.action_dim));
    for (auto& x : a) x = u(rng);
    auto st = env.step(a);
    ep.push_back({st.observation, a, st.reward, st.continuation, st.delta});
    if (!st.continuation) break;
  }
  return ep;
}

}  // namespace fieldnode::testing
