#pragma once

// World-model objective and update.
//
//   L = sum_t [ -log p(o_t|f_t) - log p(r_t|f_t) - log p(c_t|f_t)
//               + beta * KL(q(Z_t|h_t,E_t) || p(Z_t|h_t)) ]
//       + lambda_ent * sum_t ( -sum_k w_t^k log(w_t^k + eps) )
//
// averaged over the batch. Each sampled segment starts from h_0 = 0, Z_0 = 0
// with zero-padded action history.

#include <nlohmann/json.hpp>

#include <cmath>
#include <deque>
#include <random>
#include <string>
#include <vector>

#include "fieldnode/optim.hpp"
#include "fieldnode/replay.hpp"
#include "fieldnode/world_model.hpp"

namespace fieldnode {

struct WorldModelConfig {
  double beta = 1.0;
  double lambda_ent = 0.01;
  double eps = 1e-8;
  double lr = 3e-4;
  int batch = 16;
  int seq_len = 64;
  optim::Kind optimizer = optim::Kind::adam;
  double grad_clip = 100.0;
  int train_ratio = 4;  // environment steps per world-model update
  std::size_t replay_capacity = 100000;

  void validate() const {
    if (beta < 0 || lambda_ent < 0) throw ConfigError("beta and lambda_ent must be non-negative");
    if (!(eps > 0) || !(lr > 0)) throw ConfigError("eps and lr must be positive");
    if (batch < 1 || seq_len < 1 || train_ratio < 1) throw ConfigError("batch, seq_len, train_ratio must be positive");
  }

  [[nodiscard]] optim::OptimizerConfig optimizer_config() const {
    optim::OptimizerConfig o;
    o.kind = optimizer;
    o.lr = lr;
    o.clip_norm = grad_clip;
    return o;
  }
};

inline nlohmann::json to_json(const WorldModelConfig& c) {
  return {{"beta", c.beta},         {"lambda_ent", c.lambda_ent},
          {"eps", c.eps},           {"lr", c.lr},
          {"batch", c.batch},       {"seq_len", c.seq_len},
          {"optimizer", c.optimizer == optim::Kind::adam ? "adam" : "sgd"},
          {"grad_clip", c.grad_clip}, {"train_ratio", c.train_ratio},
          {"replay_capacity", c.replay_capacity}};
}

inline WorldModelConfig trainer_config_from_json(const nlohmann::json& j) {
  WorldModelConfig c;
  c.beta = j.value("beta", c.beta);
  c.lambda_ent = j.value("lambda_ent", c.lambda_ent);
  c.eps = j.value("eps", c.eps);
  c.lr = j.value("lr", c.lr);
  c.batch = j.value("batch", c.batch);
  c.seq_len = j.value("seq_len", c.seq_len);
  c.optimizer = optim::parse_kind(j.value("optimizer", std::string("adam")));
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.train_ratio = j.value("train_ratio", c.train_ratio);
  c.replay_capacity = j.value("replay_capacity", c.replay_capacity);
  c.validate();
  return c;
}

struct LossReport {
  double recon = 0;
  double reward = 0;
  double continuation = 0;
  double kl = 0;
  double delay_entropy = 0;  // already weighted by lambda_ent
  double total = 0;
  std::vector<double> gate_mean;  // K, averaged over batch and time
};

inline nlohmann::json to_json(const LossReport& r) {
  return {{"recon", r.recon},   {"reward", r.reward},       {"cont", r.continuation}, {"kl", r.kl},
          {"delay_entropy", r.delay_entropy}, {"total", r.total}, {"gate_mean", r.gate_mean}};
}

// Per-sample KL(q || p) summed over nodes and components: (B x 1).
template <class T>
ad::Var<T> kl_nodes(const NodeGaussians<T>& q, const NodeGaussians<T>& p, int n_nodes) {
  require_shape(q.mean.rows() == p.mean.rows() && q.mean.cols() == p.mean.cols(), "kl_nodes: shape mismatch");
  require_shape(q.mean.rows() % n_nodes == 0, "kl_nodes: rows not divisible by node count");
  ad::Var<T> var_p = ad::square(p.std);
  ad::Var<T> num = ad::square(q.std) + ad::square(q.mean - p.mean);
  ad::Var<T> elem = ad::log(p.std) - ad::log(q.std) + ad::scale(ad::mul(num, ad::reciprocal(var_p)), T(0.5));
  ad::Var<T> per_node = ad::add_scalar(ad::row_sum(elem), static_cast<T>(-0.5 * static_cast<double>(q.mean.cols())));
  return ad::row_sum(ad::reshape(per_node, q.mean.rows() / n_nodes, n_nodes));
}

// Per-sample gate entropy -sum_k w_k log(w_k + eps): (B x 1).
template <class T>
ad::Var<T> gate_entropy(const ad::Var<T>& gate, double eps) {
  return ad::scale(ad::row_sum(ad::mul(gate, ad::log(ad::add_scalar(gate, static_cast<T>(eps))))), T(-1));
}

// lambda_ent * sum_t mean_b entropy(w_t).
template <class T>
ad::Var<T> delay_entropy_loss(std::span<const ad::Var<T>> gates, double lambda_ent, double eps) {
  require_shape(!gates.empty(), "delay_entropy_loss: no gates");
  ad::Var<T> acc;
  for (const auto& w : gates) {
    ad::Var<T> e = ad::mean(gate_entropy(w, eps));
    acc = acc.valid() ? acc + e : e;
  }
  return ad::scale(acc, static_cast<T>(lambda_ent));
}

// Segment batch laid out per time step.
template <class T>
struct StepTensors {
  std::vector<ad::Matrix<T>> obs;     // L x (B x d)
  std::vector<ad::Matrix<T>> action;  // L x (B x A), action that led to step t
  std::vector<ad::Matrix<T>> reward;  // L x (B x 1)
  std::vector<ad::Matrix<T>> cont;    // L x (B x 1)

  [[nodiscard]] std::size_t length() const { return obs.size(); }
  [[nodiscard]] ad::Index batch() const { return obs.empty() ? 0 : obs.front().rows(); }
};

template <class T>
StepTensors<T> to_step_tensors(const SegmentBatch& batch, int obs_dim, int action_dim) {
  StepTensors<T> st;
  const auto B = static_cast<ad::Index>(batch.batch());
  const std::size_t L = batch.length();
  for (std::size_t t = 0; t < L; ++t) {
    ad::Matrix<T> o(B, obs_dim), a(B, action_dim), r(B, 1), c(B, 1);
    for (ad::Index b = 0; b < B; ++b) {
      const Transition& tr = batch.sequences[static_cast<std::size_t>(b)][t];
      const auto flat = tr.observation.flat();
      require_shape(static_cast<int>(flat.size()) == obs_dim, "segment observation width mismatch");
      require_shape(static_cast<int>(tr.action.size()) == action_dim, "segment action width mismatch");
      for (int k = 0; k < obs_dim; ++k) o(b, k) = static_cast<T>(flat[static_cast<std::size_t>(k)]);
      for (int k = 0; k < action_dim; ++k) a(b, k) = static_cast<T>(tr.action[static_cast<std::size_t>(k)]);
      r(b, 0) = static_cast<T>(tr.reward);
      c(b, 0) = tr.continuation ? T(1) : T(0);
    }
    st.obs.push_back(std::move(o));
    st.action.push_back(std::move(a));
    st.reward.push_back(std::move(r));
    st.cont.push_back(std::move(c));
  }
  return st;
}

template <class T>
struct FilterResult {
  std::vector<ad::Var<T>> h;         // h_t
  std::vector<ad::Var<T>> z;         // posterior samples Z_t
  std::vector<ad::Var<T>> features;  // f_t
  std::vector<ad::Var<T>> gates;     // w_t
  std::vector<NodeGaussians<T>> prior;
  std::vector<NodeGaussians<T>> posterior;
  std::vector<std::vector<ad::Matrix<T>>> alphas;     // per step, per layer
  std::vector<std::vector<ad::Matrix<T>>> histories;  // per step, K actions newest first (a_{t-1}..a_{t-K})
};

// Encode -> prior transition -> posterior -> sample -> feature, per step.
template <class T>
FilterResult<T> rollout_filter(ad::Graph<T>& g, const WorldModel<T>& model, const StepTensors<T>& steps,
                               std::mt19937_64& rng) {
  const ad::Index B = steps.batch();
  const int K = model.history();
  const int N = model.node_count();
  FilterResult<T> out;
  ad::Var<T> h = g.constant(model.initial_h(B));
  ad::Var<T> z = g.constant(model.initial_z(B));
  ad::Var<T> zero_action = g.constant(ad::Matrix<T>::Zero(B, model.action_dim()));
  std::deque<ad::Var<T>> window(static_cast<std::size_t>(K), zero_action);
  std::deque<const ad::Matrix<T>*> window_values(static_cast<std::size_t>(K), nullptr);
  const ad::Matrix<T> zero_value = ad::Matrix<T>::Zero(B, model.action_dim());
  for (std::size_t t = 0; t < steps.length(); ++t) {
    window.push_front(g.constant(steps.action[t]));
    window.pop_back();
    window_values.push_front(&steps.action[t]);
    window_values.pop_back();
    std::vector<ad::Var<T>> actions(window.begin(), window.end());

    ad::Var<T> E = model.encoder()(g, g.constant(steps.obs[t]));
    PriorStep<T> prior = model.ssm().prior_transition(g, h, z, actions);
    PosteriorResult<T> post = model.ssm().posterior(g, prior.h, E);
    h = prior.h;
    z = sample_nodes(post.dist, rng);

    out.h.push_back(h);
    out.z.push_back(z);
    out.features.push_back(make_feature(h, z, N));
    out.gates.push_back(prior.gate);
    out.prior.push_back(prior.prior);
    out.posterior.push_back(post.dist);
    out.alphas.push_back(std::move(post.alphas));
    std::vector<ad::Matrix<T>> hist;
    for (const auto* m : window_values) hist.push_back(m ? *m : zero_value);
    out.histories.push_back(std::move(hist));
  }
  return out;
}

template <class T>
struct WorldModelLoss {
  ad::Var<T> total;
  LossReport report;
  FilterResult<T> filter;
};

template <class T>
WorldModelLoss<T> world_model_loss(ad::Graph<T>& g, const WorldModel<T>& model, const StepTensors<T>& steps,
                                   const WorldModelConfig& cfg, std::mt19937_64& rng) {
  WorldModelLoss<T> out;
  out.filter = rollout_filter(g, model, steps, rng);
  const auto& F = out.filter;
  const int N = model.node_count();
  ad::Var<T> recon, reward, cont, kl;
  auto acc = [](ad::Var<T>& a, const ad::Var<T>& v) { a = a.valid() ? a + v : v; };
  for (std::size_t t = 0; t < steps.length(); ++t) {
    const auto& f = F.features[t];
    acc(recon, ad::mean(gaussian_nll(model.heads().decode_obs(g, f), g.constant(steps.obs[t]))));
    acc(reward, ad::mean(gaussian_nll(model.heads().predict_reward(g, f), g.constant(steps.reward[t]))));
    acc(cont, ad::mean(bernoulli_nll(model.heads().continuation_logit(g, f), g.constant(steps.cont[t]))));
    acc(kl, ad::mean(kl_nodes(F.posterior[t], F.prior[t], N)));
  }
  ad::Var<T> ent = delay_entropy_loss<T>(F.gates, cfg.lambda_ent, cfg.eps);
  out.total = recon + reward + cont + ad::scale(kl, static_cast<T>(cfg.beta)) + ent;

  auto& r = out.report;
  r.recon = static_cast<double>(recon.scalar());
  r.reward = static_cast<double>(reward.scalar());
  r.continuation = static_cast<double>(cont.scalar());
  r.kl = static_cast<double>(kl.scalar());
  r.delay_entropy = static_cast<double>(ent.scalar());
  r.total = static_cast<double>(out.total.scalar());
  r.gate_mean.assign(static_cast<std::size_t>(model.history()), 0.0);
  for (const auto& w : F.gates) {
    const auto m = w.value().colwise().mean();
    for (int k = 0; k < model.history(); ++k) r.gate_mean[static_cast<std::size_t>(k)] += static_cast<double>(m(k));
  }
  for (auto& v : r.gate_mean) v /= static_cast<double>(F.gates.size());
  return out;
}

inline void check_finite(const LossReport& r) {
  const std::pair<const char*, double> terms[] = {{"recon", r.recon},
                                                  {"reward", r.reward},
                                                  {"continuation", r.continuation},
                                                  {"kl", r.kl},
                                                  {"delay_entropy", r.delay_entropy},
                                                  {"total", r.total}};
  for (const auto& [name, v] : terms)
    if (!std::isfinite(v)) throw NonFiniteError(std::string("world-model loss term '") + name + "' is not finite");
}

// One update of every world-model parameter. Returns the pre-update losses.
template <class T>
LossReport training_step(WorldModel<T>& model, optim::Optimizer<T>& opt, const StepTensors<T>& steps,
                         const WorldModelConfig& cfg, std::mt19937_64& rng) {
  ad::Graph<T> g;
  auto loss = world_model_loss(g, model, steps, cfg, rng);
  check_finite(loss.report);
  opt.zero_grad();
  g.backward(loss.total);
  opt.step();
  return loss.report;
}

}  // namespace fieldnode
