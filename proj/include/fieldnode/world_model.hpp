#pragma once

#include <cstdint>
#include <memory>

#include "fieldnode/encoder.hpp"
#include "fieldnode/env.hpp"
#include "fieldnode/heads.hpp"
#include "fieldnode/ssm.hpp"

namespace fieldnode {

// Encoder + state-space model + prediction heads, all parameters in one
// store under the path prefixes "encoder/", "ssm/" and "heads/".
template <class T>
class WorldModel {
 public:
  WorldModel(const EnvSpec& env, const PartitionPlan& plan, const ModelConfig& cfg, std::uint64_t seed)
      : env_(env), cfg_(cfg), rng_(seed) {
    cfg_.validate();
    if (plan.obs_dim != env.obs_dim()) throw ConfigError("partition plan dimension does not match the environment");
    encoder_ = std::make_unique<FieldNodeEncoder<T>>(store_, plan, cfg_.d_node, cfg_.encoder_hidden, cfg_.encoder_layers, rng_);
    ssm_ = std::make_unique<CausalSsm<T>>(store_, cfg_, plan.node_count(), env.action_dim, rng_);
    heads_ = std::make_unique<PredictionHeads<T>>(store_, cfg_, feature_dim(), env.obs_dim(), rng_);
  }

  WorldModel(const WorldModel&) = delete;
  WorldModel& operator=(const WorldModel&) = delete;

  [[nodiscard]] const FieldNodeEncoder<T>& encoder() const { return *encoder_; }
  [[nodiscard]] FieldNodeEncoder<T>& encoder() { return *encoder_; }
  [[nodiscard]] const CausalSsm<T>& ssm() const { return *ssm_; }
  [[nodiscard]] CausalSsm<T>& ssm() { return *ssm_; }
  [[nodiscard]] const PredictionHeads<T>& heads() const { return *heads_; }
  [[nodiscard]] PredictionHeads<T>& heads() { return *heads_; }
  [[nodiscard]] nn::ParameterStore<T>& params() { return store_; }
  [[nodiscard]] const nn::ParameterStore<T>& params() const { return store_; }

  [[nodiscard]] const ModelConfig& config() const { return cfg_; }
  [[nodiscard]] const EnvSpec& env_spec() const { return env_; }
  [[nodiscard]] const PartitionPlan& plan() const { return encoder_->plan(); }
  [[nodiscard]] int node_count() const { return encoder_->node_count(); }
  [[nodiscard]] int obs_dim() const { return env_.obs_dim(); }
  [[nodiscard]] int action_dim() const { return env_.action_dim; }
  [[nodiscard]] int history() const { return cfg_.history; }
  [[nodiscard]] int feature_dim() const { return node_count() * cfg_.d_node + cfg_.d_det; }

  // h_0 = 0 and Z_0 = 0 for a batch of B.
  [[nodiscard]] ad::Matrix<T> initial_h(ad::Index batch) const { return ad::Matrix<T>::Zero(batch, cfg_.d_det); }
  [[nodiscard]] ad::Matrix<T> initial_z(ad::Index batch) const {
    return ad::Matrix<T>::Zero(batch * node_count(), cfg_.d_node);
  }

 private:
  EnvSpec env_;
  ModelConfig cfg_;
  nn::Rng rng_;
  nn::ParameterStore<T> store_;
  std::unique_ptr<FieldNodeEncoder<T>> encoder_;
  std::unique_ptr<CausalSsm<T>> ssm_;
  std::unique_ptr<PredictionHeads<T>> heads_;
};

}  // namespace fieldnode
