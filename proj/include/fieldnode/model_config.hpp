#pragma once

#include <nlohmann/json.hpp>

#include <string>

#include "fieldnode/errors.hpp"

namespace fieldnode {

enum class PosteriorMode { message_passing, global_mlp };

inline std::string to_string(PosteriorMode m) {
  return m == PosteriorMode::message_passing ? "message_passing" : "global_mlp";
}

inline PosteriorMode parse_posterior_mode(const std::string& s) {
  if (s == "message_passing") return PosteriorMode::message_passing;
  if (s == "global_mlp") return PosteriorMode::global_mlp;
  throw ConfigError("unknown posterior mode: " + s);
}

// Sizes of the world model. Observation/action dims and the node count come
// from the environment and partition plan, not from here.
struct ModelConfig {
  int d_node = 16;          // node embedding / node state width
  int d_det = 128;          // global deterministic state width
  int d_id = 8;             // node-ID embedding width
  int history = 8;          // K, action-history window of the delay gate
  int message_layers = 2;   // L, rounds of posterior message passing
  double min_std = 0.01;
  int encoder_hidden = 64;
  int encoder_layers = 2;
  int ssm_hidden = 128;     // width of the SSM's internal MLPs (one hidden layer each)
  int head_hidden = 256;
  int head_layers = 2;
  PosteriorMode posterior_mode = PosteriorMode::message_passing;

  void validate() const {
    if (d_node < 1 || d_det < 1 || d_id < 1 || history < 1 || message_layers < 0 || encoder_hidden < 1 ||
        encoder_layers < 0 || ssm_hidden < 1 || head_hidden < 1 || head_layers < 0)
      throw ConfigError("model sizes must be positive (message_layers may be 0)");
    if (!(min_std > 0)) throw ConfigError("min_std must be positive");
  }

  bool operator==(const ModelConfig&) const = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"d_node", c.d_node},
          {"d_det", c.d_det},
          {"d_id", c.d_id},
          {"history", c.history},
          {"message_layers", c.message_layers},
          {"min_std", c.min_std},
          {"encoder_hidden", c.encoder_hidden},
          {"encoder_layers", c.encoder_layers},
          {"ssm_hidden", c.ssm_hidden},
          {"head_hidden", c.head_hidden},
          {"head_layers", c.head_layers},
          {"posterior_mode", to_string(c.posterior_mode)}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_node = j.value("d_node", c.d_node);
  c.d_det = j.value("d_det", c.d_det);
  c.d_id = j.value("d_id", c.d_id);
  c.history = j.value("history", c.history);
  c.message_layers = j.value("message_layers", c.message_layers);
  c.min_std = j.value("min_std", c.min_std);
  c.encoder_hidden = j.value("encoder_hidden", c.encoder_hidden);
  c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
  c.ssm_hidden = j.value("ssm_hidden", c.ssm_hidden);
  c.head_hidden = j.value("head_hidden", c.head_hidden);
  c.head_layers = j.value("head_layers", c.head_layers);
  c.posterior_mode = parse_posterior_mode(j.value("posterior_mode", to_string(c.posterior_mode)));
  c.validate();
  return c;
}

}  // namespace fieldnode
