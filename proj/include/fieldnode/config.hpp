#pragma once

// Experiment configuration: one JSON document holding the environment,
// partition, model, trainer and behavior settings plus the run protocol.
// Unknown keys are rejected so a typo cannot silently fall back to a default.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fieldnode/behavior.hpp"
#include "fieldnode/env.hpp"
#include "fieldnode/model_config.hpp"
#include "fieldnode/partition.hpp"
#include "fieldnode/trainer.hpp"

namespace fieldnode {

struct ExperimentConfig {
  std::string env = "pendulum/balance";
  int episode_length = 200;
  int tau_max = 3;  // 0 disables the delay

  PartitionStrategy partition = PartitionStrategy::field_wise;
  std::optional<int> chunks;
  std::optional<JointMap> joint_map;  // defaults to the environment's joint grouping

  ModelConfig model;
  WorldModelConfig trainer;
  BehaviorConfig behavior;

  std::vector<std::uint64_t> seeds{0};
  int total_episodes = 100;
  int prefill_episodes = 1;
  int prefill_hold = 1;  // steps each prefill random action is held; 1 = i.i.d.
  int eval_every = 5;
  int eval_episodes = 3;
  int final_eval_episodes = 10;
  int checkpoint_every = 0;  // episodes between checkpoints; 0 = final only
  std::optional<std::string> transfer_source;  // "{seed}" expands to the run seed

  void validate() const {
    parse_spec(env, episode_length);
    if (tau_max < 0) throw ConfigError("tau_max must be >= 0");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (total_episodes < 0 || prefill_episodes < 0) throw ConfigError("episode counts must be non-negative");
    if (prefill_hold < 1) throw ConfigError("prefill_hold must be >= 1");
    if (eval_every < 0 || eval_episodes < 0 || final_eval_episodes < 0 || checkpoint_every < 0)
      throw ConfigError("evaluation and checkpoint settings must be non-negative");
    model.validate();
    trainer.validate();
    behavior.validate();
  }

  [[nodiscard]] EnvSpec env_spec() const { return parse_spec(env, episode_length); }

  [[nodiscard]] PartitionPlan plan() const {
    const EnvSpec spec = env_spec();
    std::optional<JointMap> jm = joint_map;
    if (partition == PartitionStrategy::joint_wise && !jm) jm = default_joint_map(spec);
    return build_partition(spec.field_schema, partition, chunks, jm);
  }
};

namespace config_detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, _] : j.items())
    if (!known.contains(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

inline std::set<std::string> keys_of(const nlohmann::json& j) {
  std::set<std::string> out;
  for (const auto& [k, _] : j.items()) out.insert(k);
  return out;
}

}  // namespace config_detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["env"] = c.env;
  j["episode_length"] = c.episode_length;
  j["tau_max"] = c.tau_max;
  j["partition"] = to_string(c.partition);
  if (c.chunks) j["chunks"] = *c.chunks;
  if (c.joint_map) j["joint_map"] = *c.joint_map;
  j["model"] = to_json(c.model);
  j["trainer"] = to_json(c.trainer);
  j["behavior"] = to_json(c.behavior);
  j["seeds"] = c.seeds;
  j["total_episodes"] = c.total_episodes;
  j["prefill_episodes"] = c.prefill_episodes;
  j["prefill_hold"] = c.prefill_hold;
  j["eval_every"] = c.eval_every;
  j["eval_episodes"] = c.eval_episodes;
  j["final_eval_episodes"] = c.final_eval_episodes;
  j["checkpoint_every"] = c.checkpoint_every;
  if (c.transfer_source) j["transfer_source"] = *c.transfer_source;
  return j;
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  using config_detail::keys_of;
  using config_detail::reject_unknown;
  ExperimentConfig c;
  reject_unknown(j,
                 {"env", "episode_length", "tau_max", "partition", "chunks", "joint_map", "model", "trainer",
                  "behavior", "seeds", "total_episodes", "prefill_episodes", "prefill_hold", "eval_every", "eval_episodes",
                  "final_eval_episodes", "checkpoint_every", "transfer_source", "posterior_mode"},
                 "config");
  try {
    c.env = j.value("env", c.env);
    c.episode_length = j.value("episode_length", c.episode_length);
    c.tau_max = j.value("tau_max", c.tau_max);
    c.partition = parse_strategy(j.value("partition", to_string(c.partition)));
    if (j.contains("chunks")) c.chunks = j["chunks"].get<int>();
    if (j.contains("joint_map")) c.joint_map = j["joint_map"].get<JointMap>();
    nlohmann::json model = j.value("model", nlohmann::json::object());
    if (j.contains("posterior_mode")) model["posterior_mode"] = j["posterior_mode"];
    reject_unknown(model, keys_of(to_json(ModelConfig{})), "model");
    c.model = model_config_from_json(model);
    const auto trainer = j.value("trainer", nlohmann::json::object());
    reject_unknown(trainer, keys_of(to_json(WorldModelConfig{})), "trainer");
    c.trainer = trainer_config_from_json(trainer);
    const auto behavior = j.value("behavior", nlohmann::json::object());
    reject_unknown(behavior, keys_of(to_json(BehaviorConfig{})), "behavior");
    c.behavior = behavior_config_from_json(behavior);
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    c.total_episodes = j.value("total_episodes", c.total_episodes);
    c.prefill_episodes = j.value("prefill_episodes", c.prefill_episodes);
    c.prefill_hold = j.value("prefill_hold", c.prefill_hold);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
    c.final_eval_episodes = j.value("final_eval_episodes", c.final_eval_episodes);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    if (j.contains("transfer_source")) c.transfer_source = j["transfer_source"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return experiment_config_from_json(j);
}

// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Hash of every hyperparameter. Seeds and the transfer source location are
// run identity rather than hyperparameters (whether a run is
// transfer-initialized is kept), so matched-seed comparisons share a hash
// exactly when everything else agrees.
inline std::string config_hash(const ExperimentConfig& c) {
  nlohmann::json j = to_json(c);
  j.erase("seeds");
  j["transfer_source"] = c.transfer_source.has_value();
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << fnv1a(j.dump());
  return os.str();
}

}  // namespace fieldnode
