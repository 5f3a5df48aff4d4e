#pragma once

#include <deque>
#include <random>
#include <vector>

#include "fieldnode/behavior.hpp"
#include "fieldnode/replay.hpp"
#include "fieldnode/world_model.hpp"

namespace fieldnode {

// Acting-time state estimator: filters each (possibly delayed) observation
// through the prior transition and posterior exactly as training does, then
// acts on the resulting feature. Runs without building gradients.
template <class T>
class FilteringAgent {
 public:
  FilteringAgent(const WorldModel<T>& model, const Policy<T>& policy) : model_(model), policy_(policy) { reset(); }

  void reset() {
    h_ = model_.initial_h(1);
    z_ = model_.initial_z(1);
    window_.assign(static_cast<std::size_t>(model_.history()), ad::Matrix<T>::Zero(1, model_.action_dim()));
  }

  // `prev_action` is the action that produced `obs` (zeros right after
  // reset). Greedy acting uses the posterior mean and the policy mode.
  std::vector<double> act(const FieldObservation& obs, const std::vector<double>& prev_action, bool greedy,
                          std::mt19937_64& rng) {
    require_shape(static_cast<int>(prev_action.size()) == model_.action_dim(), "agent: action width mismatch");
    ad::Matrix<T> a(1, model_.action_dim());
    for (int k = 0; k < model_.action_dim(); ++k) a(0, k) = static_cast<T>(prev_action[static_cast<std::size_t>(k)]);
    window_.push_front(std::move(a));
    window_.pop_back();

    const auto flat = obs.flat();
    require_shape(static_cast<int>(flat.size()) == model_.obs_dim(), "agent: observation width mismatch");
    ad::Matrix<T> o(1, model_.obs_dim());
    for (int k = 0; k < model_.obs_dim(); ++k) o(0, k) = static_cast<T>(flat[static_cast<std::size_t>(k)]);

    ad::Graph<T> g;
    g.set_grad_enabled(false);
    std::vector<ad::Var<T>> actions;
    for (const auto& m : window_) actions.push_back(g.constant(m));
    auto prior = model_.ssm().prior_transition(g, g.constant(h_), g.constant(z_), actions);
    auto post = model_.ssm().posterior(g, prior.h, model_.encoder()(g, g.constant(o)));
    ad::Var<T> z = greedy ? post.dist.mean : sample_nodes(post.dist, rng);
    ad::Var<T> f = make_feature(prior.h, z, model_.node_count());
    ad::Var<T> act;
    if (greedy) {
      act = policy_.mode(g, f);
    } else {
      act = policy_.sample(g, f, standard_normal<T>(1, model_.action_dim(), rng)).action;
    }
    h_ = prior.h.value();
    z_ = z.value();
    last_gate_ = prior.gate.value();
    std::vector<double> out(static_cast<std::size_t>(model_.action_dim()));
    for (int k = 0; k < model_.action_dim(); ++k) {
      const double v = static_cast<double>(act.value()(0, k));
      if (!std::isfinite(v)) throw NonFiniteError("policy produced a non-finite action");
      out[static_cast<std::size_t>(k)] = v;
    }
    return out;
  }

  [[nodiscard]] const ad::Matrix<T>& last_gate() const { return last_gate_; }

 private:
  const WorldModel<T>& model_;
  const Policy<T>& policy_;
  ad::Matrix<T> h_, z_, last_gate_;
  std::deque<ad::Matrix<T>> window_;
};

}  // namespace fieldnode
