#pragma once

// Versioned checkpoint container.
//
//   bytes 0..3   magic "FNCK"
//   bytes 4..7   format version (uint32, little-endian host order)
//   bytes 8..15  header length n (uint64)
//   n bytes      JSON header: env, partition plan, model config, config hash,
//                and the parameter index [{name, rows, cols}]
//   then         every indexed parameter as row-major float64, in index order
//
// Parameters are stored at 64 bits regardless of the training precision, so
// a float model round-trips bit-for-bit.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "fieldnode/behavior.hpp"
#include "fieldnode/world_model.hpp"

namespace fieldnode {

inline constexpr char kCheckpointMagic[4] = {'F', 'N', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json header;
  std::map<std::string, ad::Matrix<double>> params;

  [[nodiscard]] int version() const { return header.value("version", 0); }
};

namespace checkpoint_detail {

template <class T, class Store>
void add_params(nlohmann::json& index, std::vector<const ad::Parameter<T>*>& order, const Store& store) {
  for (const auto* p : store.group()) {
    index.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
    order.push_back(p);
  }
}

}  // namespace checkpoint_detail

// Writes the world model and, when given, the actor-critic. `extra` lands in
// the header under "meta" (episode counter, seed, ...).
template <class T>
void save_checkpoint(const std::filesystem::path& path, const WorldModel<T>& model, const ActorCritic<T>* agent,
                     const std::string& config_hash, const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json header;
  header["version"] = kCheckpointVersion;
  header["env"] = {{"family", model.env_spec().family},
                   {"task", model.env_spec().task},
                   {"obs_dim", model.obs_dim()},
                   {"action_dim", model.action_dim()}};
  header["plan"] = to_json(model.plan());
  header["model"] = to_json(model.config());
  header["config_hash"] = config_hash;
  header["meta"] = extra;
  header["params"] = nlohmann::json::array();
  std::vector<const ad::Parameter<T>*> order;
  checkpoint_detail::add_params<T>(header["params"], order, model.params());
  if (agent != nullptr) checkpoint_detail::add_params<T>(header["params"], order, agent->params());

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StateError("cannot write checkpoint " + tmp.string());
    const std::string text = header.dump();
    const std::uint64_t n = text.size();
    out.write(kCheckpointMagic, 4);
    out.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof kCheckpointVersion);
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    out.write(text.data(), static_cast<std::streamsize>(n));
    for (const auto* p : order) {
      const ad::Matrix<double> v = p->value.template cast<double>();
      out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    if (!out) throw StateError("short write to checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointMismatch("cannot open checkpoint " + path.string());
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t n = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw CheckpointMismatch(path.string() + " is not a checkpoint file");
  if (version != kCheckpointVersion)
    throw CheckpointMismatch("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                             std::to_string(kCheckpointVersion) + ")");
  std::string text(n, '\0');
  in.read(text.data(), static_cast<std::streamsize>(n));
  Checkpoint ck;
  try {
    ck.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointMismatch("corrupt checkpoint header: " + std::string(e.what()));
  }
  for (const auto& e : ck.header.at("params")) {
    ad::Matrix<double> m(e.at("rows").get<ad::Index>(), e.at("cols").get<ad::Index>());
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw CheckpointMismatch("checkpoint truncated while reading " + e.at("name").get<std::string>());
    ck.params.emplace(e.at("name").get<std::string>(), std::move(m));
  }
  return ck;
}

// Differences that make the checkpoint's world model unusable for `model`.
// Tasks may differ (same dynamics family); everything structural may not.
template <class T>
std::vector<std::string> compatibility_diff(const Checkpoint& ck, const WorldModel<T>& model) {
  std::vector<std::string> diff;
  auto cmp = [&](const std::string& what, const nlohmann::json& have, const nlohmann::json& want) {
    if (have != want) diff.push_back(what + ": checkpoint " + have.dump() + " vs target " + want.dump());
  };
  const auto& env = ck.header.at("env");
  cmp("dynamics family", env.at("family"), model.env_spec().family);
  cmp("observation dimension", env.at("obs_dim"), model.obs_dim());
  cmp("action dimension", env.at("action_dim"), model.action_dim());
  const auto& plan = ck.header.at("plan");
  const auto target_plan = to_json(model.plan());
  cmp("partition strategy", plan.at("strategy"), target_plan.at("strategy"));
  cmp("node count N", plan.at("nodes").size(), target_plan.at("nodes").size());
  if (plan.at("nodes").size() == target_plan.at("nodes").size()) cmp("node slices", plan.at("nodes"), target_plan.at("nodes"));
  const auto& mc = ck.header.at("model");
  const auto target_mc = to_json(model.config());
  for (const auto& [key, label] : std::vector<std::pair<std::string, std::string>>{{"d_node", "D_node"},
                                                                                   {"d_det", "D_d"},
                                                                                   {"history", "K"},
                                                                                   {"message_layers", "L"},
                                                                                   {"d_id", "D_id"},
                                                                                   {"posterior_mode", "posterior mode"}})
    cmp(label, mc.value(key, nlohmann::json()), target_mc.at(key));
  for (const auto* pp : model.params().group()) {
    const auto& p = *pp;
    auto it = ck.params.find(p.name);
    if (it == ck.params.end()) {
      diff.push_back("parameter " + p.name + " missing from checkpoint");
    } else if (it->second.rows() != p.value.rows() || it->second.cols() != p.value.cols()) {
      diff.push_back("parameter " + p.name + " shape " + std::to_string(it->second.rows()) + "x" +
                     std::to_string(it->second.cols()) + " vs " + std::to_string(p.value.rows()) + "x" +
                     std::to_string(p.value.cols()));
    }
  }
  return diff;
}

// Copies encoder, SSM and head parameters; throws CheckpointMismatch listing
// every incompatibility.
template <class T>
void load_world_model(const Checkpoint& ck, WorldModel<T>& model) {
  const auto diff = compatibility_diff(ck, model);
  if (!diff.empty()) {
    std::string msg = "checkpoint is incompatible with the target model:";
    for (const auto& d : diff) msg += "\n  - " + d;
    throw CheckpointMismatch(msg);
  }
  for (auto* p : model.params().group()) p->value = ck.params.at(p->name).template cast<T>();
}

template <class T>
void load_actor_critic(const Checkpoint& ck, ActorCritic<T>& agent) {
  std::vector<std::string> diff;
  for (const auto* pp : agent.params().group()) {
    const auto& p = *pp;
    auto it = ck.params.find(p.name);
    if (it == ck.params.end())
      diff.push_back("parameter " + p.name + " missing from checkpoint");
    else if (it->second.rows() != p.value.rows() || it->second.cols() != p.value.cols())
      diff.push_back("parameter " + p.name + " has a different shape");
  }
  if (!diff.empty()) {
    std::string msg = "checkpoint actor-critic is incompatible:";
    for (const auto& d : diff) msg += "\n  - " + d;
    throw CheckpointMismatch(msg);
  }
  for (auto* p : agent.params().group()) p->value = ck.params.at(p->name).template cast<T>();
}

}  // namespace fieldnode
