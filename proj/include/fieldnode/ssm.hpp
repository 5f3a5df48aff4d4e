#pragma once

// Field-node state-space model.
//
// Latent state: a global deterministic state h (D_d) and N node states Z
// (N x D_node), each node Gaussian. Per step:
//
//   w      = softmax(MLP_delay([h_{t-1}, mean_i Z_{t-1}]))          K weights
//   a_bar  = sum_k w_k a_{t-k}
//   h_t    = GRU(MLP_trans([mean_i Z_{t-1}, a_bar]), h_{t-1})
//   prior  = N(mu_i, sig_i),  [mu_i, sig_i] = MLP_prior([h_t, e_i])
//   u_i^0  = MLP_in([E_i, h_t, e_i])
//   u_i^l  = u_i^{l-1} + Update_l([u_i^{l-1}, m_i^l]),
//            m_i^l = sum_{j != i} alpha_ij W_m^l u_j^{l-1},
//            alpha_i. = softmax_j((W_q u_i).(W_k u_j) / sqrt(D_node))
//   post   = N(mu~_i, sig~_i),  [mu~_i, sig~_i] = MLP_out(u_i^L)
//
// Scales are min_std + softplus(raw). Batched node tensors are (B*N x D)
// with row b*N + i holding node i of sample b.

#include <random>
#include <span>
#include <string>
#include <vector>

#include "fieldnode/model_config.hpp"
#include "fieldnode/nn.hpp"

namespace fieldnode {

template <class T>
struct NodeGaussians {
  ad::Var<T> mean;  // (B*N x D_node)
  ad::Var<T> std;   // (B*N x D_node), >= min_std
};

template <class T>
struct PriorStep {
  ad::Var<T> h;  // (B x D_d)
  NodeGaussians<T> prior;
  ad::Var<T> gate;  // (B x K), rows on the simplex
};

template <class T>
struct PosteriorResult {
  NodeGaussians<T> dist;
  // One (B*N x N) matrix of message weights per layer; empty for the
  // global-MLP posterior, which builds no implicit graph.
  std::vector<ad::Matrix<T>> alphas;
};

// Message weights of one sample at one step: alpha[l](i, j).
struct ImplicitGraphSnapshot {
  std::vector<ad::Matrix<double>> alpha;
};

template <class T>
ImplicitGraphSnapshot snapshot(const std::vector<ad::Matrix<T>>& alphas, int n_nodes, int sample) {
  ImplicitGraphSnapshot s;
  for (const auto& a : alphas) s.alpha.push_back(a.middleRows(static_cast<ad::Index>(sample) * n_nodes, n_nodes).template cast<double>());
  return s;
}

// Fills a matrix with standard-normal draws.
template <class T>
ad::Matrix<T> standard_normal(ad::Index rows, ad::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  ad::Matrix<T> m(rows, cols);
  for (ad::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(n(rng));
  return m;
}

// Z = mu + sigma * eps. Without reparameterization the sample is detached.
template <class T>
ad::Var<T> sample_nodes(const NodeGaussians<T>& d, const ad::Matrix<T>& eps, bool reparameterized = true) {
  auto& g = d.mean.graph();
  require_shape(eps.rows() == d.mean.rows() && eps.cols() == d.mean.cols(), "sample_nodes: noise shape mismatch");
  ad::Var<T> z = d.mean + ad::mul(d.std, g.constant(eps));
  return reparameterized ? z : ad::stop_gradient(z);
}

template <class T>
ad::Var<T> sample_nodes(const NodeGaussians<T>& d, std::mt19937_64& rng, bool reparameterized = true) {
  return sample_nodes(d, standard_normal<T>(d.mean.rows(), d.mean.cols(), rng), reparameterized);
}

// a_bar = sum_k w[:, k] * actions[k], actions newest first (a_{t-1} first).
template <class T>
ad::Var<T> align_action(const ad::Var<T>& gate, std::span<const ad::Var<T>> actions) {
  if (static_cast<ad::Index>(actions.size()) != gate.cols())
    throw StateError("align_action: expected " + std::to_string(gate.cols()) + " actions, got " +
                     std::to_string(actions.size()));
  ad::Var<T> acc;
  for (std::size_t k = 0; k < actions.size(); ++k) {
    require_shape(actions[k].rows() == gate.rows(), "align_action: batch size mismatch");
    ad::Var<T> term = ad::mul_col(actions[k], ad::slice_cols(gate, static_cast<ad::Index>(k), 1));
    acc = acc.valid() ? acc + term : term;
  }
  return acc;
}

template <class T>
class CausalSsm {
 public:
  CausalSsm(nn::ParameterStore<T>& store, const ModelConfig& cfg, int n_nodes, int action_dim, nn::Rng& rng)
      : cfg_(cfg), n_(n_nodes), action_dim_(action_dim) {
    cfg_.validate();
    if (n_nodes < 1) throw ConfigError("node count must be positive");
    if (action_dim < 1) throw ConfigError("action_dim must be positive");
    const int D = cfg_.d_node, H = cfg_.ssm_hidden;
    delay_ = nn::Mlp<T>(store, "ssm/delay", cfg_.d_det + D, H, 1, cfg_.history, rng);
    trans_ = nn::Mlp<T>(store, "ssm/trans", D + action_dim, H, 1, H, rng);
    gru_ = nn::GruCell<T>(store, "ssm/gru", H, cfg_.d_det, rng);
    ids_ = &store.add("ssm/node_ids", n_nodes, cfg_.d_id);
    nn::init_uniform(*ids_, T(1), rng);
    prior_ = nn::Mlp<T>(store, "ssm/prior", cfg_.d_det + cfg_.d_id, H, 1, 2 * D, rng);
    if (cfg_.posterior_mode == PosteriorMode::message_passing) {
      post_in_ = nn::Mlp<T>(store, "ssm/post/in", D + cfg_.d_det + cfg_.d_id, H, 1, D, rng);
      for (int l = 0; l < cfg_.message_layers; ++l) {
        const std::string p = "ssm/post/layer" + std::to_string(l);
        MessageLayer layer;
        layer.wq = &store.add(p + "/wq", D, D);
        layer.wk = &store.add(p + "/wk", D, D);
        layer.wm = &store.add(p + "/wm", D, D);
        const T bound = static_cast<T>(std::sqrt(3.0 / D));
        nn::init_uniform(*layer.wq, bound, rng);
        nn::init_uniform(*layer.wk, bound, rng);
        nn::init_uniform(*layer.wm, bound, rng);
        layer.update = nn::Mlp<T>(store, p + "/update", 2 * D, H, 1, D, rng);
        layers_.push_back(std::move(layer));
      }
      post_out_ = nn::Mlp<T>(store, "ssm/post/out", D, H, 1, 2 * D, rng);
    } else {
      post_global_ = nn::Mlp<T>(store, "ssm/post/global", n_nodes * D + cfg_.d_det, H, 2, n_nodes * 2 * D, rng);
    }
  }

  // (B x D_d), (B*N x D_node) -> (B x K) simplex weights.
  ad::Var<T> delay_gate(ad::Graph<T>& g, const ad::Var<T>& h_prev, const ad::Var<T>& z_prev) const {
    check_state(h_prev, z_prev);
    ad::Var<T> pooled = ad::group_mean(z_prev, n_);
    return ad::row_softmax(delay_(g, ad::concat_cols({h_prev, pooled})));
  }

  ad::Var<T> deter_update(ad::Graph<T>& g, const ad::Var<T>& z_prev, const ad::Var<T>& a_bar,
                          const ad::Var<T>& h_prev) const {
    check_state(h_prev, z_prev);
    require_shape(a_bar.cols() == action_dim_ && a_bar.rows() == h_prev.rows(), "deter_update: action shape mismatch");
    ad::Var<T> pooled = ad::group_mean(z_prev, n_);
    ad::Var<T> x = ad::elu(trans_(g, ad::concat_cols({pooled, a_bar})));
    return gru_(g, x, h_prev);
  }

  NodeGaussians<T> node_prior(ad::Graph<T>& g, const ad::Var<T>& h) const {
    require_shape(h.cols() == cfg_.d_det, "node_prior: h width mismatch");
    ad::Var<T> in = ad::concat_cols({ad::repeat_rows(h, n_), ad::tile_rows(g.parameter(*ids_), h.rows())});
    return split_gaussian(prior_(g, in));
  }

  struct MessageOut {
    ad::Var<T> u;
    ad::Matrix<T> alpha;  // (B*N x N)
  };

  // One round of message passing (layer in [0, L)).
  MessageOut message_pass(ad::Graph<T>& g, const ad::Var<T>& u, int layer) const {
    if (layer < 0 || layer >= static_cast<int>(layers_.size())) throw ConfigError("message layer out of range");
    require_shape(u.cols() == cfg_.d_node && u.rows() % n_ == 0, "message_pass: node representation shape mismatch");
    const auto& L = layers_[static_cast<std::size_t>(layer)];
    ad::Var<T> q = ad::matmul(u, g.parameter(*L.wq));
    ad::Var<T> k = ad::matmul(u, g.parameter(*L.wk));
    ad::Var<T> v = ad::matmul(u, g.parameter(*L.wm));
    auto att = ad::masked_attention(q, k, v, n_);
    ad::Var<T> next = u + L.update(g, ad::concat_cols({u, att.out}));
    return {next, std::move(att.alpha)};
  }

  // E: (B*N x D_node) node embeddings from the encoder at the same step as h.
  PosteriorResult<T> posterior(ad::Graph<T>& g, const ad::Var<T>& h, const ad::Var<T>& E) const {
    require_shape(h.cols() == cfg_.d_det, "posterior: h width mismatch");
    require_shape(E.rows() == h.rows() * n_ && E.cols() == cfg_.d_node, "posterior: embedding shape mismatch");
    PosteriorResult<T> out;
    if (cfg_.posterior_mode == PosteriorMode::global_mlp) {
      ad::Var<T> flat = ad::reshape(E, h.rows(), static_cast<ad::Index>(n_) * cfg_.d_node);
      ad::Var<T> raw = post_global_(g, ad::concat_cols({flat, h}));
      out.dist = split_gaussian(ad::reshape(raw, h.rows() * n_, 2 * cfg_.d_node));
      return out;
    }
    ad::Var<T> u = post_in_(g, ad::concat_cols({E, ad::repeat_rows(h, n_), ad::tile_rows(g.parameter(*ids_), h.rows())}));
    for (int l = 0; l < static_cast<int>(layers_.size()); ++l) {
      auto m = message_pass(g, u, l);
      u = m.u;
      out.alphas.push_back(std::move(m.alpha));
    }
    out.dist = split_gaussian(post_out_(g, u));
    return out;
  }

  // Gate -> aligned action -> deterministic update -> node priors.
  PriorStep<T> prior_transition(ad::Graph<T>& g, const ad::Var<T>& h_prev, const ad::Var<T>& z_prev,
                                std::span<const ad::Var<T>> actions) const {
    PriorStep<T> s;
    s.gate = delay_gate(g, h_prev, z_prev);
    ad::Var<T> a_bar = align_action(s.gate, actions);
    s.h = deter_update(g, z_prev, a_bar, h_prev);
    s.prior = node_prior(g, s.h);
    return s;
  }

  [[nodiscard]] const ModelConfig& config() const { return cfg_; }
  [[nodiscard]] int node_count() const { return n_; }
  [[nodiscard]] int action_dim() const { return action_dim_; }
  [[nodiscard]] nn::Mlp<T>& delay_net() { return delay_; }
  [[nodiscard]] nn::GruCell<T>& gru() { return gru_; }
  [[nodiscard]] nn::Mlp<T>& prior_net() { return prior_; }
  [[nodiscard]] ad::Parameter<T>& node_ids() { return *ids_; }
  [[nodiscard]] nn::Mlp<T>& posterior_out() { return cfg_.posterior_mode == PosteriorMode::global_mlp ? post_global_ : post_out_; }

 private:
  struct MessageLayer {
    ad::Parameter<T>* wq = nullptr;
    ad::Parameter<T>* wk = nullptr;
    ad::Parameter<T>* wm = nullptr;
    nn::Mlp<T> update;
  };

  void check_state(const ad::Var<T>& h, const ad::Var<T>& z) const {
    require_shape(h.cols() == cfg_.d_det, "h width " + std::to_string(h.cols()) + " != D_d " + std::to_string(cfg_.d_det));
    require_shape(z.cols() == cfg_.d_node && z.rows() == h.rows() * n_, "Z shape does not match (B*N x D_node)");
  }

  NodeGaussians<T> split_gaussian(const ad::Var<T>& raw) const {
    const int D = cfg_.d_node;
    ad::Var<T> std = ad::add_scalar(ad::softplus(ad::slice_cols(raw, D, D)), static_cast<T>(cfg_.min_std));
    return {ad::slice_cols(raw, 0, D), std};
  }

  ModelConfig cfg_;
  int n_;
  int action_dim_;
  nn::Mlp<T> delay_, trans_, prior_, post_in_, post_out_, post_global_;
  nn::GruCell<T> gru_;
  ad::Parameter<T>* ids_ = nullptr;
  std::vector<MessageLayer> layers_;
};

}  // namespace fieldnode
