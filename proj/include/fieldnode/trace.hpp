#pragma once

// JSONL episode traces: one record per step,
//   {"t", "obs": {field: [..]}, "action", "reward", "continuation", "delta",
//    "obs_t"}
// where obs_t is the timestamp of the (possibly delayed) observation.

#include <nlohmann/json.hpp>

#include <istream>
#include <ostream>
#include <string>

#include "fieldnode/replay.hpp"

namespace fieldnode {

inline nlohmann::json observation_to_json(const FieldObservation& obs) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, v] : obs.values) j[name] = v;
  return j;
}

inline nlohmann::json transition_to_json(const Transition& tr, long t) {
  return {{"t", t},
          {"obs", observation_to_json(tr.observation)},
          {"action", tr.action},
          {"reward", tr.reward},
          {"continuation", tr.continuation ? 1 : 0},
          {"delta", tr.delta},
          {"obs_t", tr.observation.timestamp}};
}

inline void write_trace(std::ostream& os, const Episode& ep) {
  for (std::size_t t = 0; t < ep.size(); ++t) os << transition_to_json(ep[t], static_cast<long>(t)).dump() << '\n';
}

// Inverse of write_trace; field order follows `schema`.
inline Episode read_trace(std::istream& is, const FieldSchema& schema) {
  Episode ep;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    Transition tr;
    tr.observation.timestamp = j.value("obs_t", j.at("t").get<long>());
    for (const auto& f : schema) tr.observation.values.emplace_back(f.name, j.at("obs").at(f.name).get<std::vector<double>>());
    validate_observation(tr.observation, schema);
    tr.action = j.at("action").get<std::vector<double>>();
    tr.reward = j.at("reward").get<double>();
    tr.continuation = j.at("continuation").get<int>() != 0;
    tr.delta = j.at("delta").get<int>();
    ep.push_back(std::move(tr));
  }
  return ep;
}

}  // namespace fieldnode
