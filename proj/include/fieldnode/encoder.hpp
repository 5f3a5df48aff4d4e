#pragma once

#include <string>
#include <vector>

#include "fieldnode/nn.hpp"
#include "fieldnode/partition.hpp"

namespace fieldnode {

// Per-node encoders Enc_i: R^{d_i} -> R^{D_node}. Parameters are not shared
// between nodes, so element_wise plans on wide observations cost N full
// encoder stacks.
template <class T>
class FieldNodeEncoder {
 public:
  FieldNodeEncoder(nn::ParameterStore<T>& store, const PartitionPlan& plan, int d_node, int hidden, int layers,
                   nn::Rng& rng)
      : plan_(plan), d_node_(d_node) {
    validate_plan(plan_);
    for (int i = 0; i < plan_.node_count(); ++i)
      nets_.emplace_back(store, "encoder/node" + std::to_string(i), plan_.nodes[static_cast<std::size_t>(i)].dim(),
                         hidden, layers, d_node, rng);
  }

  // obs: (B x d) flat observations -> (B*N x D_node), row b*N + i is node i
  // of sample b.
  ad::Var<T> operator()(ad::Graph<T>& g, const ad::Var<T>& obs) const {
    require_shape(obs.cols() == plan_.obs_dim, "encode: observation width " + std::to_string(obs.cols()) +
                                                   " does not match plan dimension " + std::to_string(plan_.obs_dim));
    std::vector<ad::Var<T>> rows;
    rows.reserve(nets_.size());
    for (std::size_t i = 0; i < nets_.size(); ++i) rows.push_back(nets_[i](g, ad::gather_cols(obs, plan_.nodes[i].indices)));
    ad::Var<T> wide = ad::concat_cols(std::span<const ad::Var<T>>(rows));
    return ad::reshape(wide, obs.rows() * plan_.node_count(), d_node_);
  }

  [[nodiscard]] const PartitionPlan& plan() const { return plan_; }
  [[nodiscard]] int node_count() const { return plan_.node_count(); }
  [[nodiscard]] int d_node() const { return d_node_; }
  [[nodiscard]] nn::Mlp<T>& net(int i) { return nets_[static_cast<std::size_t>(i)]; }

 private:
  PartitionPlan plan_;
  int d_node_;
  std::vector<nn::Mlp<T>> nets_;
};

}  // namespace fieldnode
