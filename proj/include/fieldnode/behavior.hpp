#pragma once

// Imagination-based actor-critic on top of a frozen world model.
//
// From each start state the policy acts in latent space for H steps using
// the prior transition only. Rewards and continuations of step i are read
// from the heads at f_{i+1}. Value targets are lambda-returns
//
//   R_H = V(f_H),  R_i = r_i + gamma c_i ((1 - lam) V(f_{i+1}) + lam R_{i+1})
//
// and the policy minimizes -mean_b sum_i (R_i - sg(V(f_i))) - kappa H[pi],
// with gradients reaching the policy through actions, latent transitions,
// reward/continuation heads and the value network (dynamics path).

#include <nlohmann/json.hpp>

#include <cmath>
#include <deque>
#include <numbers>
#include <random>
#include <vector>

#include "fieldnode/optim.hpp"
#include "fieldnode/trainer.hpp"
#include "fieldnode/world_model.hpp"

namespace fieldnode {

struct BehaviorConfig {
  int horizon = 15;
  double gamma = 0.99;
  double lam = 0.95;
  double kappa = 3e-4;
  double lr_policy = 3e-4;
  double lr_value = 3e-4;
  int hidden = 256;
  int layers = 2;
  double grad_clip = 100.0;
  double min_std = 0.1;
  double max_std = 1.0;
  bool slow_critic = false;
  double slow_critic_rate = 0.02;
  int max_starts = 0;  // cap on imagination starts per update, 0 = all B*L

  void validate() const {
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    if (!(gamma > 0 && gamma <= 1)) throw ConfigError("gamma must lie in (0, 1]");
    if (lam < 0 || lam > 1) throw ConfigError("lam must lie in [0, 1]");
    if (kappa < 0) throw ConfigError("kappa must be non-negative");
    if (lr_policy < 0 || lr_value < 0) throw ConfigError("learning rates must be non-negative");
    if (!(min_std > 0) || max_std < min_std) throw ConfigError("policy std bounds invalid");
  }
};

inline nlohmann::json to_json(const BehaviorConfig& c) {
  return {{"horizon", c.horizon},         {"gamma", c.gamma},
          {"lam", c.lam},                 {"kappa", c.kappa},
          {"lr_policy", c.lr_policy},     {"lr_value", c.lr_value},
          {"hidden", c.hidden},           {"layers", c.layers},
          {"grad_clip", c.grad_clip},     {"min_std", c.min_std},
          {"max_std", c.max_std},         {"slow_critic", c.slow_critic},
          {"slow_critic_rate", c.slow_critic_rate}, {"max_starts", c.max_starts}};
}

inline BehaviorConfig behavior_config_from_json(const nlohmann::json& j) {
  BehaviorConfig c;
  c.horizon = j.value("horizon", c.horizon);
  c.gamma = j.value("gamma", c.gamma);
  c.lam = j.value("lam", c.lam);
  c.kappa = j.value("kappa", c.kappa);
  c.lr_policy = j.value("lr_policy", c.lr_policy);
  c.lr_value = j.value("lr_value", c.lr_value);
  c.hidden = j.value("hidden", c.hidden);
  c.layers = j.value("layers", c.layers);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.min_std = j.value("min_std", c.min_std);
  c.max_std = j.value("max_std", c.max_std);
  c.slow_critic = j.value("slow_critic", c.slow_critic);
  c.slow_critic_rate = j.value("slow_critic_rate", c.slow_critic_rate);
  c.max_starts = j.value("max_starts", c.max_starts);
  c.validate();
  return c;
}

// Diagonal Gaussian over pre-squash actions, squashed by tanh into [-1, 1].
// std = min_std + (max_std - min_std) * sigmoid(raw).
template <class T>
class Policy {
 public:
  Policy(nn::ParameterStore<T>& store, int feature_dim, int action_dim, const BehaviorConfig& cfg, nn::Rng& rng)
      : action_dim_(action_dim),
        min_std_(cfg.min_std),
        max_std_(cfg.max_std),
        net_(store, "policy", feature_dim, cfg.hidden, cfg.layers, 2 * action_dim, rng) {}

  struct Dist {
    ad::Var<T> mean;
    ad::Var<T> std;
  };

  struct Sample {
    ad::Var<T> action;   // (B x A), in [-1, 1]
    ad::Var<T> entropy;  // (B x 1)
  };

  Dist dist(ad::Graph<T>& g, const ad::Var<T>& f) const {
    ad::Var<T> raw = net_(g, f);
    ad::Var<T> mean = ad::slice_cols(raw, 0, action_dim_);
    ad::Var<T> std = ad::add_scalar(ad::scale(ad::sigmoid(ad::slice_cols(raw, action_dim_, action_dim_)),
                                              static_cast<T>(max_std_ - min_std_)),
                                    static_cast<T>(min_std_));
    return {mean, std};
  }

  // Reparameterized sample. The entropy is the pre-squash Gaussian entropy
  // plus a one-sample estimate of E[sum log(1 - tanh(x)^2)], the log-Jacobian
  // of the squashing.
  Sample sample(ad::Graph<T>& g, const ad::Var<T>& f, const ad::Matrix<T>& eps) const {
    Dist d = dist(g, f);
    require_shape(eps.rows() == d.mean.rows() && eps.cols() == action_dim_, "policy noise shape mismatch");
    ad::Var<T> pre = d.mean + ad::mul(d.std, g.constant(eps));
    ad::Var<T> a = ad::tanh(pre);
    const T gauss_const = static_cast<T>(0.5 * action_dim_ * std::log(2.0 * std::numbers::pi * std::numbers::e));
    ad::Var<T> gauss = ad::add_scalar(ad::row_sum(ad::log(d.std)), gauss_const);
    ad::Var<T> one_minus_sq = ad::add_scalar(ad::scale(ad::square(a), T(-1)), static_cast<T>(1 + 1e-6));
    ad::Var<T> log_jac = ad::row_sum(ad::log(one_minus_sq));
    return {a, gauss + log_jac};
  }

  // Greedy action tanh(mean).
  ad::Var<T> mode(ad::Graph<T>& g, const ad::Var<T>& f) const { return ad::tanh(dist(g, f).mean); }

  [[nodiscard]] int action_dim() const { return action_dim_; }
  [[nodiscard]] nn::Mlp<T>& net() { return net_; }

 private:
  int action_dim_;
  double min_std_, max_std_;
  nn::Mlp<T> net_;
};

template <class T>
class ValueNet {
 public:
  ValueNet(nn::ParameterStore<T>& store, const std::string& name, int feature_dim, const BehaviorConfig& cfg, nn::Rng& rng)
      : net_(store, name, feature_dim, cfg.hidden, cfg.layers, 1, rng) {}

  ad::Var<T> operator()(ad::Graph<T>& g, const ad::Var<T>& f) const { return net_(g, f); }
  [[nodiscard]] nn::Mlp<T>& net() { return net_; }

 private:
  nn::Mlp<T> net_;
};

// Policy, value and optional slow value network with their optimizers.
template <class T>
class ActorCritic {
 public:
  ActorCritic(int feature_dim, int action_dim, const BehaviorConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), rng_(seed) {
    cfg_.validate();
    policy_ = std::make_unique<Policy<T>>(store_, feature_dim, action_dim, cfg_, rng_);
    value_ = std::make_unique<ValueNet<T>>(store_, "value", feature_dim, cfg_, rng_);
    slow_ = std::make_unique<ValueNet<T>>(store_, "slow_value", feature_dim, cfg_, rng_);
    sync_slow(1.0);
    optim::OptimizerConfig po;
    po.lr = cfg_.lr_policy;
    po.clip_norm = cfg_.grad_clip;
    optim::OptimizerConfig vo = po;
    vo.lr = cfg_.lr_value;
    policy_opt_ = std::make_unique<optim::Optimizer<T>>(store_.group("policy/"), po);
    value_opt_ = std::make_unique<optim::Optimizer<T>>(store_.group("value/"), vo);
  }

  ActorCritic(const ActorCritic&) = delete;
  ActorCritic& operator=(const ActorCritic&) = delete;

  // slow <- (1 - rate) slow + rate value
  void sync_slow(double rate) {
    auto src = store_.group("value/");
    auto dst = store_.group("slow_value/");
    for (std::size_t i = 0; i < src.size(); ++i)
      dst[i]->value = (T(1) - static_cast<T>(rate)) * dst[i]->value + static_cast<T>(rate) * src[i]->value;
  }

  [[nodiscard]] const Policy<T>& policy() const { return *policy_; }
  [[nodiscard]] Policy<T>& policy() { return *policy_; }
  [[nodiscard]] const ValueNet<T>& value() const { return *value_; }
  [[nodiscard]] ValueNet<T>& value() { return *value_; }
  [[nodiscard]] const ValueNet<T>& target_value() const { return cfg_.slow_critic ? *slow_ : *value_; }
  [[nodiscard]] nn::ParameterStore<T>& params() { return store_; }
  [[nodiscard]] const nn::ParameterStore<T>& params() const { return store_; }
  [[nodiscard]] optim::Optimizer<T>& policy_optimizer() { return *policy_opt_; }
  [[nodiscard]] optim::Optimizer<T>& value_optimizer() { return *value_opt_; }
  [[nodiscard]] const BehaviorConfig& config() const { return cfg_; }

 private:
  BehaviorConfig cfg_;
  nn::Rng rng_;
  nn::ParameterStore<T> store_;
  std::unique_ptr<Policy<T>> policy_;
  std::unique_ptr<ValueNet<T>> value_, slow_;
  std::unique_ptr<optim::Optimizer<T>> policy_opt_, value_opt_;
};

// Latent start states for imagination, one row (group) per start.
template <class T>
struct ImagineStart {
  ad::Matrix<T> h;                     // (S x D_d)
  ad::Matrix<T> z;                     // (S*N x D_node)
  std::vector<ad::Matrix<T>> history;  // K x (S x A), newest first

  [[nodiscard]] ad::Index size() const { return h.rows(); }
};

// Flattens every (t, b) posterior state of a filter pass into starts,
// optionally keeping an evenly spaced subset of at most `max_starts`.
template <class T>
ImagineStart<T> starts_from_filter(const FilterResult<T>& f, int n_nodes, int max_starts = 0) {
  ImagineStart<T> s;
  const std::size_t L = f.h.size();
  require_shape(L > 0, "starts_from_filter: empty filter result");
  const ad::Index B = f.h.front().rows();
  const ad::Index total = B * static_cast<ad::Index>(L);
  std::vector<ad::Index> keep;
  if (max_starts <= 0 || max_starts >= total) {
    for (ad::Index i = 0; i < total; ++i) keep.push_back(i);
  } else {
    for (ad::Index i = 0; i < max_starts; ++i) keep.push_back(i * total / max_starts);
  }
  const auto S = static_cast<ad::Index>(keep.size());
  const ad::Index dd = f.h.front().cols(), dn = f.z.front().cols();
  const std::size_t K = f.histories.front().size();
  const ad::Index A = f.histories.front().front().cols();
  s.h.resize(S, dd);
  s.z.resize(S * n_nodes, dn);
  s.history.assign(K, ad::Matrix<T>(S, A));
  for (ad::Index r = 0; r < S; ++r) {
    const auto t = static_cast<std::size_t>(keep[static_cast<std::size_t>(r)] / B);
    const ad::Index b = keep[static_cast<std::size_t>(r)] % B;
    s.h.row(r) = f.h[t].value().row(b);
    s.z.middleRows(r * n_nodes, n_nodes) = f.z[t].value().middleRows(b * n_nodes, n_nodes);
    for (std::size_t k = 0; k < K; ++k) s.history[k].row(r) = f.histories[t][k].row(b);
  }
  return s;
}

template <class T>
struct ImaginedTrajectory {
  std::vector<ad::Var<T>> features;  // H + 1, (S x F)
  std::vector<ad::Var<T>> actions;   // H
  std::vector<ad::Var<T>> rewards;   // H, (S x 1)
  std::vector<ad::Var<T>> conts;     // H, (S x 1)
  std::vector<ad::Var<T>> entropies; // H, (S x 1)

  [[nodiscard]] int horizon() const { return static_cast<int>(actions.size()); }
};

// Pre-drawn noise so a rollout is a deterministic function of parameters.
template <class T>
struct ImagineNoise {
  std::vector<ad::Matrix<T>> action;  // H x (S x A)
  std::vector<ad::Matrix<T>> latent;  // H x (S*N x D_node)
};

template <class T>
ImagineNoise<T> draw_imagine_noise(ad::Index starts, int n_nodes, int d_node, int action_dim, int horizon,
                                   std::mt19937_64& rng) {
  ImagineNoise<T> n;
  for (int i = 0; i < horizon; ++i) {
    n.action.push_back(standard_normal<T>(starts, action_dim, rng));
    n.latent.push_back(standard_normal<T>(starts * n_nodes, d_node, rng));
  }
  return n;
}

// Rolls out H latent steps with the prior transition. With `greedy` the
// policy acts with its mode and the entropy entries are still reported.
template <class T>
ImaginedTrajectory<T> imagine(ad::Graph<T>& g, const WorldModel<T>& model, const Policy<T>& policy,
                              const ImagineStart<T>& start, const ImagineNoise<T>& noise, int horizon,
                              bool greedy = false) {
  require_shape(static_cast<int>(start.history.size()) == model.history(), "imagine: history length != K");
  require_shape(static_cast<int>(noise.action.size()) >= horizon, "imagine: not enough pre-drawn noise");
  const int N = model.node_count();
  ImaginedTrajectory<T> tr;
  ad::Var<T> h = g.constant(start.h);
  ad::Var<T> z = g.constant(start.z);
  std::deque<ad::Var<T>> hist;
  for (const auto& a : start.history) hist.push_back(g.constant(a));
  tr.features.push_back(make_feature(h, z, N));
  for (int i = 0; i < horizon; ++i) {
    const auto& f = tr.features.back();
    auto s = policy.sample(g, f, noise.action[static_cast<std::size_t>(i)]);
    ad::Var<T> a = greedy ? policy.mode(g, f) : s.action;
    hist.push_front(a);
    hist.pop_back();
    std::vector<ad::Var<T>> window(hist.begin(), hist.end());
    PriorStep<T> ps = model.ssm().prior_transition(g, h, z, window);
    h = ps.h;
    z = sample_nodes(ps.prior, noise.latent[static_cast<std::size_t>(i)]);
    ad::Var<T> next = make_feature(h, z, N);
    if (!next.value().allFinite()) throw NonFiniteError("imagined latent became non-finite at step " + std::to_string(i));
    tr.actions.push_back(a);
    tr.entropies.push_back(s.entropy);
    tr.rewards.push_back(model.heads().predict_reward(g, next));
    tr.conts.push_back(model.heads().predict_continuation(g, next));
    tr.features.push_back(next);
  }
  return tr;
}

// Graph form of the lambda-return recursion; values holds V(f_0..f_H).
template <class T>
std::vector<ad::Var<T>> lambda_returns(const ImaginedTrajectory<T>& tr, const std::vector<ad::Var<T>>& values,
                                       double gamma, double lam) {
  const int H = tr.horizon();
  require_shape(static_cast<int>(values.size()) == H + 1, "lambda_returns: need H + 1 values");
  std::vector<ad::Var<T>> R(static_cast<std::size_t>(H));
  ad::Var<T> next = values[static_cast<std::size_t>(H)];
  for (int i = H - 1; i >= 0; --i) {
    const auto ui = static_cast<std::size_t>(i);
    ad::Var<T> mix = ad::scale(values[ui + 1], static_cast<T>(1 - lam)) + ad::scale(next, static_cast<T>(lam));
    ad::Var<T> disc = ad::scale(ad::mul(tr.conts[ui], mix), static_cast<T>(gamma));
    R[ui] = tr.rewards[ui] + disc;
    next = R[ui];
  }
  return R;
}

// Plain form for a single trajectory: rewards/conts of length H, values H+1.
inline std::vector<double> lambda_returns(const std::vector<double>& rewards, const std::vector<double>& conts,
                                          const std::vector<double>& values, double gamma, double lam) {
  const std::size_t H = rewards.size();
  require_shape(conts.size() == H && values.size() == H + 1, "lambda_returns: length mismatch");
  std::vector<double> R(H);
  double next = values[H];
  for (std::size_t i = H; i-- > 0;) {
    R[i] = rewards[i] + gamma * conts[i] * ((1 - lam) * values[i + 1] + lam * next);
    next = R[i];
  }
  return R;
}

// mean over t and samples of 0.5 (V(f_t) - R_t)^2; targets are constants.
template <class T>
ad::Var<T> value_loss(ad::Graph<T>& g, const ValueNet<T>& value, const std::vector<ad::Var<T>>& features,
                      const std::vector<ad::Matrix<T>>& targets) {
  require_shape(!targets.empty() && features.size() >= targets.size(), "value_loss: length mismatch");
  ad::Var<T> acc;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    ad::Var<T> v = value(g, features[t]);
    ad::Var<T> l = ad::mean(ad::scale(ad::square(v - g.constant(targets[t])), T(0.5)));
    acc = acc.valid() ? acc + l : l;
  }
  return ad::scale(acc, static_cast<T>(1.0 / static_cast<double>(targets.size())));
}

// -mean_b sum_t (R_t - b_t) - kappa * mean entropy with an explicit baseline b.
template <class T>
ad::Var<T> policy_loss(const ImaginedTrajectory<T>& tr, const std::vector<ad::Var<T>>& values,
                       const std::vector<ad::Var<T>>& baselines, double gamma, double lam, double kappa) {
  auto R = lambda_returns(tr, values, gamma, lam);
  require_shape(baselines.size() >= R.size(), "policy_loss: need a baseline per step");
  ad::Var<T> adv_sum, ent_sum;
  for (std::size_t t = 0; t < R.size(); ++t) {
    ad::Var<T> a = R[t] - baselines[t];
    adv_sum = adv_sum.valid() ? adv_sum + a : a;
    ad::Var<T> e = ad::mean(tr.entropies[t]);
    ent_sum = ent_sum.valid() ? ent_sum + e : e;
  }
  ad::Var<T> mean_ent = ad::scale(ent_sum, static_cast<T>(1.0 / static_cast<double>(R.size())));
  return ad::scale(ad::mean(adv_sum), T(-1)) - ad::scale(mean_ent, static_cast<T>(kappa));
}

// Advantages A_t = R_t - sg(V(f_t)).
template <class T>
ad::Var<T> policy_loss(const ImaginedTrajectory<T>& tr, const std::vector<ad::Var<T>>& values, double gamma,
                       double lam, double kappa) {
  std::vector<ad::Var<T>> baselines;
  for (const auto& v : values) baselines.push_back(ad::stop_gradient(v));
  return policy_loss(tr, values, baselines, gamma, lam, kappa);
}

struct BehaviorMetrics {
  double policy_loss = 0;
  double value_loss = 0;
  double mean_return = 0;
  double mean_entropy = 0;
};

inline nlohmann::json to_json(const BehaviorMetrics& m) {
  return {{"policy_loss", m.policy_loss},
          {"value_loss", m.value_loss},
          {"mean_return", m.mean_return},
          {"mean_entropy", m.mean_entropy}};
}

// imagine -> lambda-returns -> value update -> policy update. World-model
// parameters are frozen throughout; only the actor-critic changes.
template <class T>
BehaviorMetrics behavior_step(const WorldModel<T>& model, ActorCritic<T>& ac, const ImagineStart<T>& start,
                              std::mt19937_64& rng) {
  const auto& cfg = ac.config();
  const int H = cfg.horizon;
  auto noise = draw_imagine_noise<T>(start.size(), model.node_count(), model.config().d_node, model.action_dim(), H, rng);

  ad::Graph<T> g;
  g.freeze_all(model.params().group());
  g.freeze_all(ac.params().group("value/"));
  g.freeze_all(ac.params().group("slow_value/"));
  auto traj = imagine(g, model, ac.policy(), start, noise, H);

  // Targets from detached features.
  std::vector<ad::Matrix<T>> targets;
  double mean_return = 0;
  {
    ad::Graph<T> gt;
    gt.set_grad_enabled(false);
    ImaginedTrajectory<T> det;
    for (const auto& f : traj.features) det.features.push_back(gt.constant(f.value()));
    for (int i = 0; i < H; ++i) {
      det.actions.push_back(gt.constant(traj.actions[static_cast<std::size_t>(i)].value()));
      det.rewards.push_back(gt.constant(traj.rewards[static_cast<std::size_t>(i)].value()));
      det.conts.push_back(gt.constant(traj.conts[static_cast<std::size_t>(i)].value()));
    }
    std::vector<ad::Var<T>> vals;
    for (const auto& f : det.features) vals.push_back(ac.target_value()(gt, f));
    for (const auto& r : lambda_returns(det, vals, cfg.gamma, cfg.lam)) {
      targets.push_back(r.value());
      mean_return += static_cast<double>(r.value().mean());
    }
    mean_return /= H;
  }

  BehaviorMetrics m;
  m.mean_return = mean_return;
  {
    ad::Graph<T> gv;
    std::vector<ad::Var<T>> feats;
    for (int i = 0; i < H; ++i) feats.push_back(gv.constant(traj.features[static_cast<std::size_t>(i)].value()));
    ad::Var<T> vl = value_loss(gv, ac.value(), feats, targets);
    m.value_loss = static_cast<double>(vl.scalar());
    if (!std::isfinite(m.value_loss)) throw NonFiniteError("value loss is not finite");
    if (cfg.lr_value > 0) {
      ac.value_optimizer().zero_grad();
      gv.backward(vl);
      ac.value_optimizer().step();
      if (cfg.slow_critic) ac.sync_slow(cfg.slow_critic_rate);
    }
  }

  std::vector<ad::Var<T>> values;
  for (const auto& f : traj.features) values.push_back(ac.value()(g, f));
  ad::Var<T> pl = policy_loss(traj, values, cfg.gamma, cfg.lam, cfg.kappa);
  m.policy_loss = static_cast<double>(pl.scalar());
  double ent = 0;
  for (const auto& e : traj.entropies) ent += static_cast<double>(e.value().mean());
  m.mean_entropy = ent / H;
  if (!std::isfinite(m.policy_loss) || !std::isfinite(m.mean_entropy))
    throw NonFiniteError("policy loss or entropy is not finite");
  if (cfg.lr_policy > 0) {
    ac.policy_optimizer().zero_grad();
    g.backward(pl);
    ac.policy_optimizer().step();
  }
  return m;
}

}  // namespace fieldnode
