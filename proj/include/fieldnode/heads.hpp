#pragma once

#include <cmath>
#include <numbers>

#include "fieldnode/model_config.hpp"
#include "fieldnode/nn.hpp"

namespace fieldnode {

// f = [flatten(Z), h], dimension N*D_node + D_d.
template <class T>
ad::Var<T> make_feature(const ad::Var<T>& h, const ad::Var<T>& z, int n_nodes) {
  require_shape(z.rows() == h.rows() * n_nodes, "make_feature: Z rows must be B*N");
  return ad::concat_cols({ad::reshape(z, h.rows(), z.cols() * n_nodes), h});
}

// Observation decoder and reward head parameterize unit-variance Gaussians;
// the continuation head parameterizes a Bernoulli through a logit.
template <class T>
class PredictionHeads {
 public:
  PredictionHeads(nn::ParameterStore<T>& store, const ModelConfig& cfg, int feature_dim, int obs_dim, nn::Rng& rng)
      : feature_dim_(feature_dim),
        obs_(store, "heads/obs", feature_dim, cfg.head_hidden, cfg.head_layers, obs_dim, rng),
        reward_(store, "heads/reward", feature_dim, cfg.head_hidden, cfg.head_layers, 1, rng),
        cont_(store, "heads/cont", feature_dim, cfg.head_hidden, cfg.head_layers, 1, rng) {}

  ad::Var<T> decode_obs(ad::Graph<T>& g, const ad::Var<T>& f) const { return obs_(g, checked(f)); }
  ad::Var<T> predict_reward(ad::Graph<T>& g, const ad::Var<T>& f) const { return reward_(g, checked(f)); }
  ad::Var<T> continuation_logit(ad::Graph<T>& g, const ad::Var<T>& f) const { return cont_(g, checked(f)); }
  ad::Var<T> predict_continuation(ad::Graph<T>& g, const ad::Var<T>& f) const {
    return ad::sigmoid(continuation_logit(g, f));
  }

  [[nodiscard]] nn::Mlp<T>& obs_net() { return obs_; }
  [[nodiscard]] nn::Mlp<T>& reward_net() { return reward_; }
  [[nodiscard]] nn::Mlp<T>& cont_net() { return cont_; }
  [[nodiscard]] int feature_dim() const { return feature_dim_; }

 private:
  const ad::Var<T>& checked(const ad::Var<T>& f) const {
    require_shape(f.cols() == feature_dim_, "head input width " + std::to_string(f.cols()) + " != feature dim " +
                                                std::to_string(feature_dim_));
    return f;
  }

  int feature_dim_;
  nn::Mlp<T> obs_, reward_, cont_;
};

// ---------------------------------------------------------------------------
// Per-sample negative log-likelihoods, (B x 1).

// -log N(x; mean, I) = 0.5 |x - mean|^2 + 0.5 d log(2 pi)
template <class T>
ad::Var<T> gaussian_nll(const ad::Var<T>& mean, const ad::Var<T>& target) {
  const T constant = static_cast<T>(0.5 * static_cast<double>(mean.cols()) * std::log(2.0 * std::numbers::pi));
  return ad::add_scalar(ad::scale(ad::row_sum(ad::square(target - mean)), T(0.5)), constant);
}

// -log Bernoulli(y; sigmoid(logit)) = softplus(logit) - y * logit
template <class T>
ad::Var<T> bernoulli_nll(const ad::Var<T>& logit, const ad::Var<T>& target) {
  return ad::row_sum(ad::softplus(logit) - ad::mul(target, logit));
}

}  // namespace fieldnode
